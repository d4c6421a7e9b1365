//! Translation-invariant infection kernels `λ_{o,·}`.
//!
//! A [`Kernel`] stores only the rates out of the origin; translation
//! invariance holds by construction. Three families are supported:
//! power laws `β‖y‖₁^{-α}`, nearest-neighbour kernels and explicit finite
//! tables. Every kernel may carry a truncation level `k`, after which rates
//! vanish for `‖y‖₁ > k`.
//!
//! Radial kernels are summed shell by shell: the number of lattice points
//! with `‖y‖₁ = m` is a polynomial in `m`, so total and tail masses reduce to
//! one-dimensional series. These are summed exactly up to
//! [`EXACT_SHELLS`] and the remainder is bracketed by integral comparison.
//! Values are reported as the bracket midpoint, with the bracket available
//! through [`Kernel::tail_bracket`].

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alias::AliasTable;
use crate::geometry::{GeometryError, Site, MAX_DIM};

/// Number of `ℓ₁` shells summed exactly before the analytic tail takes over.
pub const EXACT_SHELLS: u64 = 1_000_000;

/// Default bound on `tail_mass(sim_cutoff) / total_rate` for kernels without
/// a finite cutoff.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-6;

/// Largest number of offsets a sampling table may hold.
pub const MAX_SUPPORT: u64 = 4_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("summability violated: power law with alpha = {alpha} <= d = {dim} and no cutoff")]
    NotSummable { alpha: f64, dim: usize },
    #[error("kernel has no positive rate")]
    EmptySupport,
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("truncation level must be >= 1")]
    BadTruncation,
    #[error("offset has dimension {got}, kernel has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tail tolerance {tolerance} not reachable within {EXACT_SHELLS} shells")]
    ToleranceUnreachable { tolerance: f64 },
    #[error("sampling support of {size} offsets exceeds the limit {MAX_SUPPORT}; truncate the kernel")]
    SupportTooLarge { size: u64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One explicit table entry of a finite-table kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub offset: Vec<i64>,
    pub rate: f64,
}

/// Kernel family as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilySpec {
    PowerLaw { alpha: f64, beta: f64 },
    NearestNeighbor { beta: f64 },
    Table { entries: Vec<TableEntry> },
}

/// Serializable kernel descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub family: FamilySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<u64>,
    /// Maximal relative tail mass neglected by the sampler when there is no
    /// finite cutoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_tolerance: Option<f64>,
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel, KernelError> {
        let tol = self.tail_tolerance.unwrap_or(DEFAULT_TAIL_TOLERANCE);
        if !(tol > 0.0 && tol < 1.0) {
            return Err(KernelError::InvalidParameter(format!("tail_tolerance {tol} not in (0,1)")));
        }
        let kernel = match &self.family {
            FamilySpec::PowerLaw { alpha, beta } => Kernel::power_law(self.dim, *alpha, *beta, self.cutoff),
            FamilySpec::NearestNeighbor { beta } => Kernel::nearest_neighbor(self.dim, *beta),
            FamilySpec::Table { entries } => {
                let mut table = Vec::with_capacity(entries.len());
                for e in entries {
                    if e.offset.len() != self.dim {
                        return Err(KernelError::DimensionMismatch {
                            expected: self.dim,
                            got: e.offset.len(),
                        });
                    }
                    table.push((Site::from_coords(&e.offset)?, e.rate));
                }
                Kernel::table(self.dim, table)
            }
        }?;
        let kernel = match (self.cutoff, &self.family) {
            (Some(k), FamilySpec::NearestNeighbor { .. } | FamilySpec::Table { .. }) => kernel.truncate(k)?,
            _ => kernel,
        };
        Ok(kernel.with_tail_tolerance(tol))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Family {
    PowerLaw { alpha: f64, beta: f64 },
    NearestNeighbor { beta: f64 },
    /// Sorted by offset; all rates positive.
    Table(Vec<(Site, f64)>),
}

/// Closed interval bracketing a series value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn exact(v: f64) -> Bracket {
        Bracket { lo: v, hi: v }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// Shell masses of a radial kernel: `shell(m) = N_d(m) β m^{-α}`.
#[derive(Debug)]
struct RadialSums {
    alpha: f64,
    beta: f64,
    nn: bool,
    /// Coefficients of the lattice-shell count polynomial `N_d(m)`.
    poly: Vec<f64>,
    /// `prefix[m] = Σ_{j <= m} shell(j)`, exact for `m <= prefix.len() - 1`.
    prefix: Vec<f64>,
}

impl RadialSums {
    fn new(dim: usize, alpha: f64, beta: f64, nn: bool, max_radius: u64) -> RadialSums {
        let poly = shell_count_poly(dim);
        let top = if nn { 1 } else { max_radius.min(EXACT_SHELLS) };
        let mut prefix = Vec::with_capacity(top as usize + 1);
        prefix.push(0.0);
        // Kahan summation keeps the long prefix accurate to ~1 ulp
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for m in 1..=top {
            let term = if nn { 2.0 * dim as f64 * beta } else { shell_count(&poly, m) * beta * (m as f64).powf(-alpha) };
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            prefix.push(sum);
        }
        RadialSums { alpha, beta, nn, poly, prefix }
    }

    fn exact_top(&self) -> u64 {
        self.prefix.len() as u64 - 1
    }

    /// Bracket of `Σ_{m=a+1}^{b} shell(m)`, `b` possibly infinite.
    fn series(&self, a: u64, b: Option<u64>) -> Bracket {
        if let Some(b) = b {
            if b <= a {
                return Bracket::exact(0.0);
            }
        }
        if self.nn {
            let hit = a < 1 && b.is_none_or(|b| b >= 1);
            return Bracket::exact(if hit { self.prefix[1] } else { 0.0 });
        }
        let top = self.exact_top();
        let mut exact = 0.0;
        if a < top {
            let hi = b.map_or(top, |b| b.min(top));
            exact = self.prefix[hi as usize] - self.prefix[a as usize];
        }
        let start = a.max(top);
        let analytic = match b {
            Some(b) if b <= start => Bracket::exact(0.0),
            _ => {
                let s = start as f64;
                let (i1, i2) = match b {
                    None => (self.integral(s, f64::INFINITY), self.integral(s + 1.0, f64::INFINITY)),
                    Some(b) => (self.integral(s, b as f64), self.integral(s + 1.0, b as f64 + 1.0)),
                };
                Bracket { lo: i1.min(i2), hi: i1.max(i2) }
            }
        };
        Bracket { lo: exact + analytic.lo, hi: exact + analytic.hi }
    }

    /// `∫_a^b N_d(m) β m^{-α} dm`.
    fn integral(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for (j, c) in self.poly.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let p = j as f64 + 1.0 - self.alpha;
            let v = if p == 0.0 {
                (b / a).ln()
            } else if b.is_infinite() {
                -a.powf(p) / p
            } else {
                (b.powf(p) - a.powf(p)) / p
            };
            total += c * v;
        }
        total * self.beta
    }
}

/// `N_d(m) = Σ_{k=1}^{d} 2^k C(d,k) C(m-1,k-1)` as a polynomial in `m`.
fn shell_count_poly(dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for k in 1..=dim {
        // C(m-1, k-1) = Π_{j=1}^{k-1} (m - j) / j
        let mut p = vec![1.0];
        for j in 1..k {
            let mut next = vec![0.0; p.len() + 1];
            for (deg, c) in p.iter().enumerate() {
                next[deg + 1] += c / j as f64;
                next[deg] -= c * j as f64 / j as f64;
            }
            p = next;
        }
        let w = 2f64.powi(k as i32) * binomial(dim, k);
        for (deg, c) in p.iter().enumerate() {
            out[deg] += w * c;
        }
    }
    out
}

fn shell_count(poly: &[f64], m: u64) -> f64 {
    let x = m as f64;
    poly.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Offsets, rates and alias table used by the samplers.
#[derive(Debug)]
pub struct SamplingTable {
    offsets: Vec<Site>,
    rates: Vec<f64>,
    total: f64,
    alias: AliasTable,
    sim_cutoff: u64,
    neglected: f64,
}

impl SamplingTable {
    fn from_pairs(pairs: Vec<(Site, f64)>, sim_cutoff: u64, neglected: f64) -> Option<SamplingTable> {
        let pairs: Vec<(Site, f64)> = pairs.into_iter().filter(|(_, r)| *r > 0.0).collect();
        if pairs.is_empty() {
            return None;
        }
        let (offsets, rates): (Vec<Site>, Vec<f64>) = pairs.into_iter().unzip();
        let total = rates.iter().sum();
        let alias = AliasTable::new(&rates);
        Some(SamplingTable { offsets, rates, total, alias, sim_cutoff, neglected })
    }

    pub fn offsets(&self) -> &[Site] {
        &self.offsets
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Total rate `Λ_eff` of the sampled (possibly truncated) kernel.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// Radius beyond which the sampler carries no mass.
    pub fn sim_cutoff(&self) -> u64 {
        self.sim_cutoff
    }

    /// Kernel mass outside the sampler's support.
    pub fn neglected_mass(&self) -> f64 {
        self.neglected
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Rate of the sampled kernel at `y` (0 outside the support).
    pub fn rate_of(&self, y: Site) -> f64 {
        // offsets are sorted
        match self.offsets.binary_search(&y) {
            Ok(i) => self.rates[i],
            Err(_) => 0.0,
        }
    }

    #[inline]
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Site {
        self.offsets[self.alias.sample(rng)]
    }
}

/// Sampling table for the pointwise difference `hi - lo` of two kernels;
/// `None` when the difference vanishes.
pub fn difference_table(lo: &SamplingTable, hi: &SamplingTable) -> Option<SamplingTable> {
    let pairs = hi
        .offsets
        .iter()
        .zip(&hi.rates)
        .map(|(&y, &r)| (y, (r - lo.rate_of(y)).max(0.0)))
        .collect();
    SamplingTable::from_pairs(pairs, hi.sim_cutoff, 0.0)
}

#[derive(Debug)]
struct KernelInner {
    dim: usize,
    family: Family,
    cutoff: Option<u64>,
    tail_tolerance: f64,
    radial: Option<Arc<OnceLock<RadialSums>>>,
    radial_top: u64,
    sampler: OnceLock<Result<Arc<SamplingTable>, KernelError>>,
}

/// An infection kernel. Cheap to clone; immutable and shareable across
/// threads.
#[derive(Debug, Clone)]
pub struct Kernel(Arc<KernelInner>);

impl PartialEq for Kernel {
    fn eq(&self, other: &Kernel) -> bool {
        self.0.dim == other.0.dim
            && self.0.family == other.0.family
            && self.0.cutoff == other.0.cutoff
            && self.0.tail_tolerance == other.0.tail_tolerance
    }
}

impl Kernel {
    fn from_parts(dim: usize, family: Family, cutoff: Option<u64>, radial: Option<Arc<OnceLock<RadialSums>>>, radial_top: u64) -> Kernel {
        Kernel(Arc::new(KernelInner {
            dim,
            family,
            cutoff,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
            radial,
            radial_top,
            sampler: OnceLock::new(),
        }))
    }

    fn check_dim(dim: usize) -> Result<(), KernelError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(GeometryError::BadDimension(dim).into());
        }
        Ok(())
    }

    /// `λ_{o,y} = β ‖y‖₁^{-α}`, optionally truncated at `cutoff`.
    pub fn power_law(dim: usize, alpha: f64, beta: f64, cutoff: Option<u64>) -> Result<Kernel, KernelError> {
        Kernel::check_dim(dim)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("beta must be > 0, got {beta}")));
        }
        if cutoff == Some(0) {
            return Err(KernelError::BadTruncation);
        }
        if cutoff.is_none() && alpha <= dim as f64 {
            return Err(KernelError::NotSummable { alpha, dim });
        }
        let top = cutoff.unwrap_or(EXACT_SHELLS).min(EXACT_SHELLS);
        Ok(Kernel::from_parts(dim, Family::PowerLaw { alpha, beta }, cutoff, Some(Arc::new(OnceLock::new())), top))
    }

    /// `λ_{o,y} = β 1{‖y‖₁ = 1}`.
    pub fn nearest_neighbor(dim: usize, beta: f64) -> Result<Kernel, KernelError> {
        Kernel::check_dim(dim)?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("beta must be > 0, got {beta}")));
        }
        Ok(Kernel::from_parts(dim, Family::NearestNeighbor { beta }, None, Some(Arc::new(OnceLock::new())), 1))
    }

    /// Explicit finite table of offset rates. Zero rates are dropped; the
    /// origin may not carry a positive rate.
    pub fn table(dim: usize, entries: impl IntoIterator<Item = (Site, f64)>) -> Result<Kernel, KernelError> {
        Kernel::check_dim(dim)?;
        let mut table: Vec<(Site, f64)> = Vec::new();
        for (y, r) in entries {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(KernelError::InvalidParameter(format!("rate {r} at {y:?} is not finite and >= 0")));
            }
            if y.0[dim..].iter().any(|&c| c != 0) {
                return Err(KernelError::DimensionMismatch { expected: dim, got: MAX_DIM });
            }
            if y == Site::ORIGIN && r > 0.0 {
                return Err(KernelError::InvalidParameter("rate at the origin must be 0".into()));
            }
            if r > 0.0 {
                table.push((y, r));
            }
        }
        table.sort_by(|a, b| a.0.cmp(&b.0));
        for w in table.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(KernelError::InvalidParameter(format!("duplicate offset {:?}", w[0].0)));
            }
        }
        if table.is_empty() {
            return Err(KernelError::EmptySupport);
        }
        Ok(Kernel::from_parts(dim, Family::Table(table), None, None, 0))
    }

    fn with_tail_tolerance(self, tol: f64) -> Kernel {
        let inner = &self.0;
        Kernel(Arc::new(KernelInner {
            dim: inner.dim,
            family: inner.family.clone(),
            cutoff: inner.cutoff,
            tail_tolerance: tol,
            radial: inner.radial.clone(),
            radial_top: inner.radial_top,
            sampler: OnceLock::new(),
        }))
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn cutoff(&self) -> Option<u64> {
        self.0.cutoff
    }

    pub fn tail_tolerance(&self) -> f64 {
        self.0.tail_tolerance
    }

    pub fn spec(&self) -> KernelSpec {
        let family = match &self.0.family {
            Family::PowerLaw { alpha, beta } => FamilySpec::PowerLaw { alpha: *alpha, beta: *beta },
            Family::NearestNeighbor { beta } => FamilySpec::NearestNeighbor { beta: *beta },
            Family::Table(t) => FamilySpec::Table {
                entries: t
                    .iter()
                    .map(|(y, r)| TableEntry {
                        offset: y.coords(self.0.dim).iter().map(|&c| c as i64).collect(),
                        rate: *r,
                    })
                    .collect(),
            },
        };
        KernelSpec {
            dim: self.0.dim,
            family,
            cutoff: self.0.cutoff,
            tail_tolerance: (self.0.tail_tolerance != DEFAULT_TAIL_TOLERANCE).then_some(self.0.tail_tolerance),
        }
    }

    fn radial(&self) -> Option<&RadialSums> {
        let cell = self.0.radial.as_ref()?;
        Some(cell.get_or_init(|| {
            let (alpha, beta, nn) = match self.0.family {
                Family::PowerLaw { alpha, beta } => (alpha, beta, false),
                Family::NearestNeighbor { beta } => (1.0, beta, true),
                Family::Table(_) => unreachable!("tables have no radial sums"),
            };
            RadialSums::new(self.0.dim, alpha, beta, nn, self.0.radial_top)
        }))
    }

    /// `λ_{o,y}` for an offset given as integer coordinates.
    pub fn rate(&self, y: &[i64]) -> Result<f64, KernelError> {
        if y.len() != self.0.dim {
            return Err(KernelError::DimensionMismatch { expected: self.0.dim, got: y.len() });
        }
        Ok(self.rate_at(Site::from_coords(y)?))
    }

    /// `λ_{o,y}` for a lattice offset.
    pub fn rate_at(&self, y: Site) -> f64 {
        let m = y.l1();
        if m == 0 || self.0.cutoff.is_some_and(|k| m > k) {
            return 0.0;
        }
        match &self.0.family {
            Family::PowerLaw { alpha, beta } => beta * (m as f64).powf(-alpha),
            Family::NearestNeighbor { beta } => {
                if m == 1 {
                    *beta
                } else {
                    0.0
                }
            }
            Family::Table(t) => match t.binary_search_by(|(s, _)| s.cmp(&y)) {
                Ok(i) => t[i].1,
                Err(_) => 0.0,
            },
        }
    }

    /// Bracket of `Σ_{‖y‖₁ > L} λ_{o,y}`.
    pub fn tail_bracket(&self, l: f64) -> Bracket {
        let a = if l <= 0.0 { 0 } else { l.floor().min(u64::MAX as f64 / 2.0) as u64 };
        match &self.0.family {
            Family::Table(t) => Bracket::exact(t.iter().filter(|(y, _)| y.l1() > a).map(|(_, r)| r).sum()),
            _ => self.radial().expect("radial kernel").series(a, self.0.cutoff),
        }
    }

    /// `Σ_{‖y‖₁ > L} λ_{o,y}` (bracket midpoint).
    pub fn tail_mass(&self, l: f64) -> f64 {
        self.tail_bracket(l).mid()
    }

    pub fn total_rate_bracket(&self) -> Bracket {
        self.tail_bracket(0.0)
    }

    /// `λ_∞ = Σ_{y ≠ o} λ_{o,y}` (bracket midpoint).
    pub fn total_rate(&self) -> f64 {
        self.total_rate_bracket().mid()
    }

    /// Truncation at level `k`: rates with `‖y‖₁ > k` set to zero.
    pub fn truncate(&self, k: u64) -> Result<Kernel, KernelError> {
        if k == 0 {
            return Err(KernelError::BadTruncation);
        }
        let cutoff = Some(self.0.cutoff.map_or(k, |c| c.min(k)));
        let family = match &self.0.family {
            Family::Table(t) => {
                let kept: Vec<(Site, f64)> = t.iter().filter(|(y, _)| y.l1() <= k).copied().collect();
                if kept.is_empty() {
                    return Err(KernelError::EmptySupport);
                }
                Family::Table(kept)
            }
            f => f.clone(),
        };
        let inner = &self.0;
        Ok(Kernel(Arc::new(KernelInner {
            dim: inner.dim,
            family,
            cutoff,
            tail_tolerance: inner.tail_tolerance,
            radial: inner.radial.clone(),
            radial_top: inner.radial_top,
            sampler: OnceLock::new(),
        })))
    }

    /// The kernel `c·λ`.
    pub fn scaled(&self, c: f64) -> Result<Kernel, KernelError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("scale must be > 0, got {c}")));
        }
        let dim = self.0.dim;
        let k = match &self.0.family {
            Family::PowerLaw { alpha, beta } => Kernel::power_law(dim, *alpha, beta * c, self.0.cutoff)?,
            Family::NearestNeighbor { beta } => Kernel::nearest_neighbor(dim, beta * c)?,
            Family::Table(t) => Kernel::table(dim, t.iter().map(|&(y, r)| (y, r * c)))?,
        };
        let k = match (self.0.cutoff, &self.0.family) {
            (Some(cut), Family::Table(_) | Family::NearestNeighbor { .. }) => k.truncate(cut)?,
            _ => k,
        };
        Ok(k.with_tail_tolerance(self.0.tail_tolerance))
    }

    /// The reversed kernel `y ↦ λ_{o,-y}` driving the dual process.
    pub fn reversed(&self) -> Kernel {
        match &self.0.family {
            Family::Table(t) => {
                let k = Kernel::table(self.0.dim, t.iter().map(|&(y, r)| (-y, r))).expect("reversal keeps a valid table");
                let k = match self.0.cutoff {
                    Some(c) => k.truncate(c).expect("reversal keeps support"),
                    None => k,
                };
                k.with_tail_tolerance(self.0.tail_tolerance)
            }
            _ => self.clone(),
        }
    }

    /// Invariance under all coordinate sign changes and permutations.
    pub fn is_symmetric(&self) -> bool {
        match &self.0.family {
            Family::Table(t) => {
                let maps = signed_permutations(self.0.dim);
                t.iter().all(|&(y, r)| maps.iter().all(|g| self.rate_at(apply(g, y)) == r))
            }
            _ => true,
        }
    }

    /// Whether `λ_{o,y} = O(‖y‖^{-α})` for some `α > 2d + 1`, the decay under
    /// which a finite seed spreads at most linearly. Finite-range kernels
    /// qualify.
    pub fn has_linear_speed_decay(&self) -> bool {
        match (&self.0.family, self.0.cutoff) {
            (_, Some(_)) | (Family::NearestNeighbor { .. } | Family::Table(_), None) => true,
            (Family::PowerLaw { alpha, .. }, None) => *alpha > 2.0 * self.0.dim as f64 + 1.0,
        }
    }

    /// Whether the support generates `Z^d` as a group.
    pub fn is_irreducible(&self) -> bool {
        match &self.0.family {
            Family::Table(t) => generates_lattice(self.0.dim, t.iter().map(|(y, _)| *y)),
            // unit vectors always carry mass
            _ => true,
        }
    }

    /// Sampling table for the engine. Kernels without a finite cutoff are
    /// truncated at the smallest radius whose neglected relative tail mass is
    /// within the tail tolerance.
    pub fn sampler(&self) -> Result<Arc<SamplingTable>, KernelError> {
        self.0.sampler.get_or_init(|| self.build_sampler().map(Arc::new)).clone()
    }

    /// Effective support radius used by the samplers.
    pub fn sim_cutoff(&self) -> Result<u64, KernelError> {
        Ok(self.sampler()?.sim_cutoff())
    }

    fn build_sampler(&self) -> Result<SamplingTable, KernelError> {
        let dim = self.0.dim;
        match &self.0.family {
            Family::Table(t) => {
                let cutoff = t.iter().map(|(y, _)| y.l1()).max().unwrap_or(0);
                SamplingTable::from_pairs(t.clone(), cutoff, 0.0).ok_or(KernelError::EmptySupport)
            }
            _ => {
                let radius = match self.0.cutoff {
                    Some(k) => k,
                    None => self.radius_for_tolerance()?,
                };
                let radius = match self.0.family {
                    Family::NearestNeighbor { .. } => radius.min(1),
                    _ => radius,
                };
                let sums = self.radial().expect("radial kernel");
                let poly = &sums.poly;
                let size: f64 = (1..=radius.min(EXACT_SHELLS)).map(|m| shell_count(poly, m)).sum();
                if size > MAX_SUPPORT as f64 || radius > EXACT_SHELLS {
                    return Err(KernelError::SupportTooLarge { size: size as u64 });
                }
                let mut pairs = Vec::with_capacity(size as usize);
                enumerate_l1_ball(dim, radius, &mut |y| pairs.push((y, self.rate_at(y))));
                pairs.sort_by(|a, b| a.0.cmp(&b.0));
                let neglected = self.tail_mass(radius as f64);
                SamplingTable::from_pairs(pairs, radius, neglected).ok_or(KernelError::EmptySupport)
            }
        }
    }

    fn radius_for_tolerance(&self) -> Result<u64, KernelError> {
        let tol = self.0.tail_tolerance;
        let total = self.total_rate_bracket().lo;
        let sums = self.radial().expect("radial kernel");
        let top = sums.exact_top();
        // tail(K) is nonincreasing in K: bisect on the smallest admissible K
        let ok = |k: u64| self.tail_bracket(k as f64).hi <= tol * total;
        if !ok(top) {
            return Err(KernelError::ToleranceUnreachable { tolerance: tol });
        }
        let (mut lo, mut hi) = (0u64, top);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi.max(1))
    }

    /// `self ≤ other` pointwise on the sampled supports.
    pub fn dominated_by(&self, other: &Kernel) -> Result<bool, KernelError> {
        if self.dim() != other.dim() {
            return Ok(false);
        }
        let a = self.sampler()?;
        let b = other.sampler()?;
        Ok(a.offsets().iter().zip(a.rates()).all(|(&y, &r)| r <= b.rate_of(y)))
    }

    /// Searches for `(ξ, L*)` with `tail(rL) ≤ ξ·tail(L)` for all integers
    /// `L ∈ [L*, L_max]`.
    pub fn find_tail_bound(&self, r: f64, search: &TailBoundSearch) -> Result<TailBound, TailBoundFailure> {
        assert!(r > 1.0, "ratio r must exceed 1");
        let l_max = search.l_max.max(1);
        let l_star_max = search.l_star_max.clamp(1, l_max);
        let ratios: Vec<f64> = (1..=l_max)
            .map(|l| {
                let denom = self.tail_mass(l as f64);
                if denom <= 0.0 {
                    0.0
                } else {
                    self.tail_mass(r * l as f64) / denom
                }
            })
            .collect();
        // suffix[i] = max ratio over L in [i+1, l_max]
        let mut suffix = ratios.clone();
        for i in (0..suffix.len() - 1).rev() {
            suffix[i] = suffix[i].max(suffix[i + 1]);
        }
        let best = suffix[l_star_max as usize - 1];
        if !(best < 1.0) {
            return Err(TailBoundFailure { best_xi: best, l_max });
        }
        let accept = best * (1.0 + search.rel_slack);
        let idx = (0..l_star_max as usize)
            .find(|&i| suffix[i] <= accept && suffix[i] < 1.0)
            .unwrap_or(l_star_max as usize - 1);
        Ok(TailBound { xi: suffix[idx], l_star: idx as u64 + 1, r, l_max })
    }
}

/// Search window for [`Kernel::find_tail_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBoundSearch {
    /// Largest `L` at which the inequality is verified.
    pub l_max: u64,
    /// Largest admissible `L*`.
    pub l_star_max: u64,
    /// The smallest `L*` whose `ξ` is within this relative slack of the best
    /// achievable `ξ` is returned.
    pub rel_slack: f64,
}

impl Default for TailBoundSearch {
    fn default() -> Self {
        TailBoundSearch { l_max: 10_000, l_star_max: 100, rel_slack: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub xi: f64,
    pub l_star: u64,
    pub r: f64,
    pub l_max: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error, Serialize, Deserialize)]
#[error("no ξ < 1 found for L ≤ {l_max} (best {best_xi})")]
pub struct TailBoundFailure {
    pub best_xi: f64,
    pub l_max: u64,
}

fn enumerate_l1_ball(dim: usize, radius: u64, f: &mut impl FnMut(Site)) {
    fn rec(dim: usize, depth: usize, budget: i64, cur: &mut [i32; MAX_DIM], f: &mut impl FnMut(Site)) {
        if depth == dim {
            if cur.iter().any(|&c| c != 0) {
                f(Site(*cur));
            }
            return;
        }
        for v in -budget..=budget {
            cur[depth] = v as i32;
            rec(dim, depth + 1, budget - v.abs(), cur, f);
        }
        cur[depth] = 0;
    }
    let mut cur = [0i32; MAX_DIM];
    rec(dim, 0, radius as i64, &mut cur, f);
}

/// Signed permutation: `(perm, signs)` mapping `y` to `z_i = s_i y_{perm[i]}`.
type SignedPerm = (Vec<usize>, Vec<i32>);

fn signed_permutations(dim: usize) -> Vec<SignedPerm> {
    let mut perms = vec![vec![]];
    for _ in 0..dim {
        let mut next = Vec::new();
        for p in &perms {
            for i in 0..dim {
                if !p.contains(&i) {
                    let mut q = p.clone();
                    q.push(i);
                    next.push(q);
                }
            }
        }
        perms = next;
    }
    let mut out = Vec::new();
    for p in perms {
        for mask in 0..(1u32 << dim) {
            let signs = (0..dim).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
            out.push((p.clone(), signs));
        }
    }
    out
}

fn apply(g: &SignedPerm, y: Site) -> Site {
    let mut c = [0i32; MAX_DIM];
    for (i, (&src, &s)) in g.0.iter().zip(&g.1).enumerate() {
        c[i] = s * y.0[src];
    }
    Site(c)
}

/// Whether the integer vectors generate `Z^dim` as a group, via integer row
/// reduction to Hermite form.
pub fn generates_lattice(dim: usize, gens: impl IntoIterator<Item = Site>) -> bool {
    let mut rows: Vec<Vec<i64>> = gens.into_iter().map(|s| s.0[..dim].iter().map(|&c| c as i64).collect()).collect();
    let mut pivots = Vec::with_capacity(dim);
    for col in 0..dim {
        // Euclid on column `col` among remaining rows
        loop {
            let mut nonzero: Vec<usize> = (0..rows.len()).filter(|&i| rows[i][col] != 0).collect();
            if nonzero.len() <= 1 {
                break;
            }
            nonzero.sort_by_key(|&i| rows[i][col].abs());
            let p = nonzero[0];
            for &i in &nonzero[1..] {
                let q = rows[i][col] / rows[p][col];
                let (src, dst) = (rows[p].clone(), &mut rows[i]);
                for (d, s) in dst.iter_mut().zip(&src) {
                    *d -= q * s;
                }
            }
        }
        match (0..rows.len()).find(|&i| rows[i][col] != 0) {
            Some(i) => {
                pivots.push(rows[i][col].abs());
                rows.swap_remove(i);
            }
            None => return false,
        }
    }
    pivots.iter().all(|&p| p == 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1(k: i32) -> Site {
        Site::unit(0, k)
    }

    #[test]
    fn rate_examples() {
        let k = Kernel::power_law(1, 2.0, 1.0, None).unwrap();
        assert_eq!(k.rate(&[0]).unwrap(), 0.0);
        assert_eq!(k.rate(&[2]).unwrap(), 0.25);
        let t = k.truncate(1).unwrap();
        assert_eq!(t.rate(&[2]).unwrap(), 0.0);
        assert!(matches!(k.rate(&[1, 0]), Err(KernelError::DimensionMismatch { .. })));
    }

    #[test]
    fn total_rate_examples() {
        assert_eq!(Kernel::nearest_neighbor(1, 1.0).unwrap().total_rate(), 2.0);
        let k = Kernel::power_law(1, 2.0, 1.0, Some(2)).unwrap();
        assert!((k.total_rate() - 2.5).abs() < 1e-15);
        let t = Kernel::table(1, [(e1(1), 1.5)]).unwrap();
        assert_eq!(t.total_rate(), 1.5);
    }

    #[test]
    fn divergent_power_law_rejected() {
        assert!(matches!(Kernel::power_law(1, 1.0, 1.0, None), Err(KernelError::NotSummable { .. })));
        assert!(matches!(Kernel::power_law(2, 1.5, 1.0, None), Err(KernelError::NotSummable { .. })));
        assert!(Kernel::power_law(1, 0.5, 1.0, Some(10)).is_ok());
    }

    #[test]
    fn truncate_examples() {
        let k = Kernel::power_law(1, 2.0, 3.0, None).unwrap();
        let t = k.truncate(1).unwrap();
        let s = t.sampler().unwrap();
        assert_eq!(s.offsets(), &[e1(-1), e1(1)]);
        assert_eq!(s.rates(), &[3.0, 3.0]);
        assert_eq!(k.truncate(5).unwrap().truncate(3).unwrap(), k.truncate(3).unwrap());
        let table = Kernel::table(1, [(e1(2), 0.5)]).unwrap();
        assert_eq!(table.truncate(1), Err(KernelError::EmptySupport));
    }

    #[test]
    fn tail_mass_examples() {
        let k = Kernel::power_law(1, 2.0, 1.0, None).unwrap();
        let expect = 2.0 * (std::f64::consts::PI.powi(2) / 6.0 - 1.0);
        assert!((k.tail_mass(1.0) - expect).abs() < 1e-9);
        let nn = Kernel::nearest_neighbor(1, 1.0).unwrap();
        assert_eq!(nn.tail_mass(0.0), 2.0);
        assert_eq!(nn.tail_mass(1.0), 0.0);
        assert_eq!(k.truncate(7).unwrap().tail_mass(7.0), 0.0);
    }

    #[test]
    fn shell_counts() {
        // brute-force count of points with ‖y‖₁ = m
        for dim in 1..=3 {
            let poly = shell_count_poly(dim);
            for m in 1..=6u64 {
                let mut count = 0u64;
                enumerate_l1_ball(dim, m, &mut |y| {
                    if y.l1() == m {
                        count += 1
                    }
                });
                assert_eq!(shell_count(&poly, m), count as f64, "dim {dim} m {m}");
            }
        }
    }

    #[test]
    fn symmetry_examples() {
        assert!(Kernel::power_law(3, 4.0, 1.0, None).unwrap().is_symmetric());
        let t = Kernel::table(
            2,
            [(Site::unit(0, 1), 1.0), (Site::unit(0, -1), 1.0), (Site::unit(1, 1), 2.0), (Site::unit(1, -1), 2.0)],
        )
        .unwrap();
        assert!(!t.is_symmetric());
        assert!(!Kernel::table(1, [(e1(1), 1.0)]).unwrap().is_symmetric());
        assert!(Kernel::table(1, [(e1(1), 1.0), (e1(-1), 1.0)]).unwrap().is_symmetric());
    }

    #[test]
    fn irreducibility_examples() {
        assert!(Kernel::nearest_neighbor(2, 1.0).unwrap().is_irreducible());
        assert!(!Kernel::table(1, [(e1(2), 1.0), (e1(-2), 1.0)]).unwrap().is_irreducible());
        assert!(Kernel::table(1, [(e1(2), 1.0), (e1(3), 1.0)]).unwrap().is_irreducible());
        let diag = Kernel::table(2, [(Site([1, 1, 0, 0]), 1.0), (Site([1, -1, 0, 0]), 1.0)]).unwrap();
        assert!(!diag.is_irreducible());
    }

    #[test]
    fn tail_bound_finite_range() {
        let k = Kernel::power_law(1, 2.0, 1.0, Some(10)).unwrap();
        let tb = k.find_tail_bound(2.0, &TailBoundSearch { l_max: 50, l_star_max: 20, rel_slack: 0.0 }).unwrap();
        assert_eq!(tb.xi, 0.0);
        assert_eq!(tb.l_star, 5);
    }

    #[test]
    fn tail_bound_failure_on_flat_tails() {
        // all mass at distance 100: tail(2L) = tail(L) for every L < 50
        let k = Kernel::table(1, [(e1(100), 1.0), (e1(-100), 1.0)]).unwrap();
        let err = k.find_tail_bound(2.0, &TailBoundSearch { l_max: 40, l_star_max: 40, rel_slack: 0.01 }).unwrap_err();
        assert_eq!(err.best_xi, 1.0);
    }

    #[test]
    fn sampler_tolerance_policy() {
        let k = Kernel::power_law(1, 3.0, 1.0, None).unwrap();
        let s = k.sampler().unwrap();
        let total = k.total_rate();
        assert!(s.neglected_mass() <= 1e-6 * total);
        // one shell less would violate the tolerance
        assert!(k.tail_mass(s.sim_cutoff() as f64 - 1.0) > 1e-6 * total);
        assert!((s.total() + s.neglected_mass() - total).abs() < 1e-9);
    }

    #[test]
    fn spec_round_trip() {
        let k = Kernel::power_law(2, 5.0, 0.5, Some(4)).unwrap();
        assert_eq!(k.spec().build().unwrap(), k);
        let t = Kernel::table(1, [(e1(1), 1.0), (e1(-3), 0.25)]).unwrap();
        assert_eq!(t.spec().build().unwrap(), t);
    }
}
