//! Lattice sites and the space-time box algebra: axis-aligned and tilted
//! boxes, boundary shells with directed faces, seed sets and the separation
//! predicate used when counting arrow endpoints.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use thiserror::Error;

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension must be in 1..={MAX_DIM}, got {0}")]
    BadDimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coordinate {0} does not fit in a lattice site")]
    CoordinateOverflow(i64),
    #[error("invalid box parameter: {0}")]
    InvalidBox(String),
    #[error("seed set must be nonempty")]
    EmptySeed,
    #[error("face axis {axis} out of range for dimension {dim}")]
    BadFace { axis: usize, dim: usize },
}

/// A point of Z^d, stored with `MAX_DIM` coordinates; coordinates beyond the
/// working dimension are always zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Site(pub [i32; MAX_DIM]);

impl Site {
    pub const ORIGIN: Site = Site([0; MAX_DIM]);

    pub fn from_coords(coords: &[i64]) -> Result<Site, GeometryError> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(GeometryError::BadDimension(coords.len()));
        }
        let mut c = [0i32; MAX_DIM];
        for (slot, &v) in c.iter_mut().zip(coords) {
            *slot = i32::try_from(v).map_err(|_| GeometryError::CoordinateOverflow(v))?;
        }
        Ok(Site(c))
    }

    /// Unit vector along `axis`, scaled by `sign`.
    pub fn unit(axis: usize, sign: i32) -> Site {
        let mut c = [0; MAX_DIM];
        c[axis] = sign;
        Site(c)
    }

    pub fn coords(&self, dim: usize) -> &[i32] {
        &self.0[..dim]
    }

    pub fn l1(&self) -> u64 {
        self.0.iter().map(|&c| c.unsigned_abs() as u64).sum()
    }

    pub fn linf(&self) -> u64 {
        self.0.iter().map(|&c| c.unsigned_abs() as u64).max().unwrap_or(0)
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // trailing zero coordinates are padding
        let used = self.0.iter().rposition(|&c| c != 0).map_or(1, |i| i + 1);
        write!(f, "{:?}", &self.0[..used])
    }
}

impl Add for Site {
    type Output = Site;
    fn add(self, rhs: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(rhs.0) {
            *a += b;
        }
        Site(c)
    }
}

impl Sub for Site {
    type Output = Site;
    fn sub(self, rhs: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        Site(c)
    }
}

impl Neg for Site {
    type Output = Site;
    fn neg(self) -> Site {
        Site(self.0.map(|c| -c))
    }
}

/// A closed time interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi)
    }

    pub fn length(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.hi - self.lo
        }
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }
}

/// Removes `cut` from every interval of `set`. Boundary points of `cut` are
/// kept, which only affects measure-zero sets.
fn subtract(set: Vec<Interval>, cut: Interval) -> Vec<Interval> {
    if cut.is_empty() {
        return set;
    }
    let mut out = Vec::with_capacity(set.len() + 1);
    for iv in set {
        let left = Interval::new(iv.lo, iv.hi.min(cut.lo));
        let right = Interval::new(iv.lo.max(cut.hi), iv.hi);
        let left_open = cut.lo > iv.lo;
        let right_open = cut.hi < iv.hi;
        if left_open && !left.is_empty() {
            out.push(left);
        }
        if right_open && !right.is_empty() {
            out.push(right);
        }
    }
    out
}

/// Whether a box is the full box or its restriction to nonnegative
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orthant {
    #[default]
    Full,
    Positive,
}

/// Space-time box `{(x,t) : 0 <= t <= T, |x_i - t*theta_i| <= L_i}`,
/// optionally restricted to `x_i >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeBox {
    dim: usize,
    half_widths: [f64; MAX_DIM],
    height: f64,
    tilt: [f64; MAX_DIM],
    orthant: Orthant,
}

impl SpaceTimeBox {
    /// Axis-aligned box `B_L x [0,T]` with equal half-widths.
    pub fn cube(dim: usize, half_width: f64, height: f64) -> Result<SpaceTimeBox, GeometryError> {
        SpaceTimeBox::new(&vec![half_width; dim], height, &vec![0.0; dim], Orthant::Full)
    }

    pub fn new(
        half_widths: &[f64],
        height: f64,
        tilt: &[f64],
        orthant: Orthant,
    ) -> Result<SpaceTimeBox, GeometryError> {
        let dim = half_widths.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(GeometryError::BadDimension(dim));
        }
        if tilt.len() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: tilt.len() });
        }
        if half_widths.iter().any(|l| !(*l >= 0.0)) {
            return Err(GeometryError::InvalidBox("half-widths must be nonnegative".into()));
        }
        if !(height >= 0.0) || !height.is_finite() {
            return Err(GeometryError::InvalidBox("height must be finite and nonnegative".into()));
        }
        if tilt.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidBox("tilt must be finite".into()));
        }
        let mut l = [0.0; MAX_DIM];
        l[..dim].copy_from_slice(half_widths);
        let mut th = [0.0; MAX_DIM];
        th[..dim].copy_from_slice(tilt);
        Ok(SpaceTimeBox { dim, half_widths: l, height, tilt: th, orthant })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths[..self.dim]
    }

    pub fn tilt(&self) -> &[f64] {
        &self.tilt[..self.dim]
    }

    pub fn orthant(&self) -> Orthant {
        self.orthant
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.tilt().iter().all(|&v| v == 0.0)
    }

    pub fn with_height(&self, height: f64) -> SpaceTimeBox {
        SpaceTimeBox { height, ..self.clone() }
    }

    pub fn with_orthant(&self, orthant: Orthant) -> SpaceTimeBox {
        SpaceTimeBox { orthant, ..self.clone() }
    }

    /// Box with half-widths enlarged by `extra` (componentwise).
    pub fn widened(&self, extra: &[f64]) -> SpaceTimeBox {
        let mut out = self.clone();
        for (l, r) in out.half_widths.iter_mut().zip(extra) {
            *l += r;
        }
        out
    }

    fn coordinate_ok(&self, i: usize, x: i32, t: f64) -> bool {
        let x = x as f64;
        (x - t * self.tilt[i]).abs() <= self.half_widths[i]
            && (self.orthant == Orthant::Full || x >= 0.0)
    }

    pub fn contains(&self, x: Site, t: f64) -> bool {
        (0.0..=self.height).contains(&t) && (0..self.dim).all(|i| self.coordinate_ok(i, x.0[i], t))
    }

    /// Whether `x` lies in the spatial section at time `t`, ignoring the time
    /// extent.
    pub fn section_contains(&self, x: Site, t: f64) -> bool {
        (0..self.dim).all(|i| self.coordinate_ok(i, x.0[i], t))
    }

    /// Integer coordinate range `[lo, hi]` of the section along axis `i` at
    /// time `t`.
    fn axis_range(&self, i: usize, t: f64) -> (i64, i64) {
        let c = t * self.tilt[i];
        let mut lo = (c - self.half_widths[i]).ceil();
        let hi = (c + self.half_widths[i]).floor();
        if self.orthant == Orthant::Positive {
            lo = lo.max(0.0);
        }
        (clamp_coord(lo), clamp_coord(hi))
    }

    /// All lattice points of the spatial section at time `t`, in
    /// lexicographic order.
    pub fn section_sites(&self, t: f64) -> Vec<Site> {
        let ranges: Vec<(i64, i64)> = (0..self.dim).map(|i| self.axis_range(i, t)).collect();
        enumerate_ranges(&ranges)
    }

    /// Lattice points visited by the box at any time in `[0, T]`.
    pub fn hull_sites(&self) -> Vec<Site> {
        let ranges: Vec<(i64, i64)> = (0..self.dim)
            .map(|i| {
                let (a0, b0) = self.axis_range(i, 0.0);
                let (a1, b1) = self.axis_range(i, self.height);
                (a0.min(a1), b0.max(b1))
            })
            .collect();
        enumerate_ranges(&ranges)
    }

    /// The set of times in `[0, T]` during which `x` belongs to the box.
    pub fn time_interval(&self, x: Site) -> Interval {
        let mut iv = Interval::new(0.0, self.height);
        for i in 0..self.dim {
            let xi = x.0[i] as f64;
            if self.orthant == Orthant::Positive && xi < 0.0 {
                return Interval::new(1.0, 0.0);
            }
            let th = self.tilt[i];
            let l = self.half_widths[i];
            let axis = if th == 0.0 {
                if xi.abs() <= l {
                    Interval::new(f64::NEG_INFINITY, f64::INFINITY)
                } else {
                    Interval::new(1.0, 0.0)
                }
            } else {
                let a = (xi - l) / th;
                let b = (xi + l) / th;
                Interval::new(a.min(b), a.max(b))
            };
            iv = iv.intersect(&axis);
            if iv.is_empty() {
                return iv;
            }
        }
        iv
    }
}

fn clamp_coord(v: f64) -> i64 {
    v.clamp(i32::MIN as f64, i32::MAX as f64) as i64
}

fn enumerate_ranges(ranges: &[(i64, i64)]) -> Vec<Site> {
    if ranges.iter().any(|(lo, hi)| lo > hi) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur = [0i32; MAX_DIM];
    fn rec(ranges: &[(i64, i64)], depth: usize, cur: &mut [i32; MAX_DIM], out: &mut Vec<Site>) {
        if depth == ranges.len() {
            out.push(Site(*cur));
            return;
        }
        for v in ranges[depth].0..=ranges[depth].1 {
            cur[depth] = v as i32;
            rec(ranges, depth + 1, cur, out);
        }
    }
    rec(ranges, 0, &mut cur, &mut out);
    out
}

/// Which part of a shell is selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    /// The whole shell `B_{L+R} \ B_L`.
    All,
    /// Directed face along `axis`: points with `x_axis > L` (positive) or
    /// `x_axis < -L` (negative).
    Axis { axis: usize, positive: bool },
    /// Tilted face along the last coordinate: `±(x_d - theta_d t)` in
    /// `[L_d, L_d + R_d]`.
    Tilted { positive: bool },
}

/// Boundary shell of width `R` around an inner box.
#[derive(Debug, Clone, PartialEq)]
pub struct Shell {
    inner: SpaceTimeBox,
    outer: SpaceTimeBox,
    widths: [f64; MAX_DIM],
    face: Face,
}

impl Shell {
    /// Widths may be `f64::INFINITY` for the unbounded complement.
    pub fn new(inner: SpaceTimeBox, widths: &[f64], face: Face) -> Result<Shell, GeometryError> {
        let dim = inner.dim();
        if widths.len() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: widths.len() });
        }
        if widths.iter().any(|w| !(*w >= 0.0)) {
            return Err(GeometryError::InvalidBox("shell widths must be nonnegative".into()));
        }
        if let Face::Axis { axis, .. } = face {
            if axis >= dim {
                return Err(GeometryError::BadFace { axis, dim });
            }
        }
        let outer = inner.widened(widths);
        let mut w = [0.0; MAX_DIM];
        w[..dim].copy_from_slice(widths);
        Ok(Shell { inner, outer, widths: w, face })
    }

    pub fn inner(&self) -> &SpaceTimeBox {
        &self.inner
    }

    pub fn outer(&self) -> &SpaceTimeBox {
        &self.outer
    }

    pub fn face(&self) -> Face {
        self.face
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths[..self.inner.dim()]
    }

    pub fn is_unbounded(&self) -> bool {
        self.widths().iter().any(|w| w.is_infinite())
    }

    pub fn contains(&self, x: Site, t: f64) -> bool {
        match self.face {
            Face::All => self.outer.contains(x, t) && !self.inner.contains(x, t),
            Face::Axis { axis, positive } => {
                let offset = x.0[axis] as f64 - t * self.inner.tilt[axis];
                if positive {
                    self.outer.contains(x, t)
                        && !self.inner.contains(x, t)
                        && offset > self.inner.half_widths[axis]
                } else {
                    let xr = reflect(x, axis);
                    mirror_box(&self.outer, axis, true).contains(xr, t)
                        && !mirror_box(&self.inner, axis, true).contains(xr, t)
                        && -offset > self.inner.half_widths[axis]
                }
            }
            Face::Tilted { positive } => {
                let d = self.inner.dim() - 1;
                let offset = x.0[d] as f64 - t * self.inner.tilt[d];
                let s = if positive { offset } else { -offset };
                let l = self.inner.half_widths[d];
                self.outer.contains(x, t)
                    && !self.inner.contains(x, t)
                    && s >= l
                    && s <= l + self.widths[d]
            }
        }
    }

    /// The set of times at which `x` belongs to the shell, as disjoint
    /// closed intervals (endpoints are approximate only on measure-zero
    /// boundaries).
    pub fn time_intervals(&self, x: Site) -> Vec<Interval> {
        let dim = self.inner.dim();
        match self.face {
            Face::All => subtract(vec![self.outer.time_interval(x)], self.inner.time_interval(x))
                .into_iter()
                .filter(|iv| !iv.is_empty())
                .collect(),
            Face::Axis { axis, positive } => {
                let xr = if positive { x } else { reflect(x, axis) };
                let th = if positive { self.inner.tilt[axis] } else { -self.inner.tilt[axis] };
                let l = self.inner.half_widths[axis];
                let face_iv = if th == 0.0 {
                    // untilted: the strict inequality holds at all times or none
                    if xr.0[axis] as f64 > l {
                        Interval::new(f64::NEG_INFINITY, f64::INFINITY)
                    } else {
                        Interval::new(1.0, 0.0)
                    }
                } else {
                    // the boundary instant has measure zero
                    closed_band(xr.0[axis] as f64, th, l, f64::INFINITY)
                };
                // for the mirrored face the tilt must be mirrored as well
                let outer = mirror_box(&self.outer, axis, !positive);
                let inner = mirror_box(&self.inner, axis, !positive);
                let base = outer.time_interval(xr).intersect(&face_iv);
                subtract(vec![base], inner.time_interval(xr))
                    .into_iter()
                    .filter(|iv| !iv.is_empty())
                    .collect()
            }
            Face::Tilted { positive } => {
                let d = dim - 1;
                let sign = if positive { 1.0 } else { -1.0 };
                let face_iv = closed_band(
                    sign * x.0[d] as f64,
                    sign * self.inner.tilt[d],
                    self.inner.half_widths[d],
                    self.inner.half_widths[d] + self.widths[d],
                );
                let base = self.outer.time_interval(x).intersect(&face_iv);
                subtract(vec![base], self.inner.time_interval(x))
                    .into_iter()
                    .filter(|iv| !iv.is_empty())
                    .collect()
            }
        }
    }
}

fn reflect(mut x: Site, axis: usize) -> Site {
    x.0[axis] = -x.0[axis];
    x
}

/// Mirror image of a box through `x_axis = 0` (the orthant restriction then
/// applies to the reflected coordinates).
fn mirror_box(b: &SpaceTimeBox, axis: usize, mirror: bool) -> SpaceTimeBox {
    let mut out = b.clone();
    if mirror {
        out.tilt[axis] = -out.tilt[axis];
    }
    out
}

/// Times `t` with `lo <= x - t*theta <= hi`.
fn closed_band(x: f64, theta: f64, lo: f64, hi: f64) -> Interval {
    if theta == 0.0 {
        if x >= lo && x <= hi {
            Interval::new(f64::NEG_INFINITY, f64::INFINITY)
        } else {
            Interval::new(1.0, 0.0)
        }
    } else {
        let a = (x - hi) / theta;
        let b = (x - lo) / theta;
        Interval::new(a.min(b), a.max(b))
    }
}

/// A finite nonempty seed set `A` of lattice offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    dim: usize,
    offsets: Vec<Site>,
}

impl Seed {
    pub fn new(dim: usize, offsets: impl IntoIterator<Item = Site>) -> Result<Seed, GeometryError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(GeometryError::BadDimension(dim));
        }
        let mut offsets: Vec<Site> = offsets.into_iter().collect();
        if offsets.iter().any(|s| s.0[dim..].iter().any(|&c| c != 0)) {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: MAX_DIM });
        }
        offsets.sort_unstable();
        offsets.dedup();
        if offsets.is_empty() {
            return Err(GeometryError::EmptySeed);
        }
        Ok(Seed { dim, offsets })
    }

    pub fn singleton(dim: usize) -> Seed {
        Seed { dim, offsets: vec![Site::ORIGIN] }
    }

    /// The full cube `B_n = [-n, n]^d`.
    pub fn cube(dim: usize, n: u32) -> Seed {
        let ranges = vec![(-(n as i64), n as i64); dim];
        Seed { dim, offsets: enumerate_ranges(&ranges) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offsets(&self) -> &[Site] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// `n = min{m : A ⊆ B_m}`.
    pub fn radius(&self) -> u64 {
        self.offsets.iter().map(Site::linf).max().unwrap_or(0)
    }

    /// `A(x) = {y + x : y ∈ A}`.
    pub fn translate(&self, x: Site) -> Seed {
        Seed { dim: self.dim, offsets: self.offsets.iter().map(|&y| y + x).collect() }
    }
}

/// `|s - t| > 1` or `||x - y||_∞ >= 2n + 1`.
pub fn separated(p: (Site, f64), q: (Site, f64), n: u64) -> bool {
    (p.1 - q.1).abs() > 1.0 || (p.0 - q.0).linf() >= 2 * n + 1
}
