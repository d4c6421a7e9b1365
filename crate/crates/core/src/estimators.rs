//! Monte Carlo and deterministic functionals of the process.
//!
//! Replicates run in parallel on the rayon pool, but replicate `i` always
//! uses random stream `first_replicate + i`, and results are reduced in index
//! order, so every estimate is independent of the number of workers.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    reachable, run, run_coupled, run_with, sample_window, EngineError, InfectedSet, Observer, SimConfig, Termination, Trajectory,
};
use crate::geometry::{separated, Face, GeometryError, Interval, Seed, Shell, Site, SpaceTimeBox};
use crate::kernel::{Kernel, KernelError};
use crate::rng::StreamBase;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Number of bootstrap resamples.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Largest tolerated fraction of escaped replicates.
pub const MAX_ESCAPE_RATE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, EstimatorError> {
    Err(EstimatorError::InvalidArgument(msg.into()))
}

/// Conditions attached to an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    /// More than [`MAX_ESCAPE_RATE`] of the replicates escaped.
    EscapeRateExceeded,
    /// The late part of the occupation integral is too large for the finite
    /// horizon to approximate the infinite-time integral.
    DivergenceSuspected,
    /// Too little data for a decision.
    Inconclusive,
    /// Bisection stopped at a probe whose interval covered the threshold.
    NotSeparated,
    /// Bisection hit its iteration limit.
    IterationLimit,
    /// The healing-first probability `δ/(δ+λ_∞)` is below `1/(1+λ_∞)`, so
    /// the conditional-extinction bound is not guaranteed.
    BoundAssumesUnitHealing,
    /// The kernel decays too slowly for the at-most-linear-speed statement
    /// (`α ≤ 2d + 1`).
    SlowKernelDecay,
}

/// Where the random numbers of an estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub master: u64,
    pub experiment: u64,
    pub first_replicate: u64,
}

/// A point estimate with a 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Standard error of `value`.
    pub std_error: f64,
    pub n_samples: u64,
    pub n_escaped: u64,
    pub provenance: Provenance,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl Estimate {
    /// Proportion `k/n` with its Wilson interval.
    pub fn proportion(k: u64, n: u64, provenance: Provenance) -> Estimate {
        let (lo, hi) = wilson(k, n);
        let p = if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let se = if n == 0 { 0.0 } else { (p * (1.0 - p) / n as f64).sqrt() };
        Estimate {
            value: p,
            ci_low: lo.min(p),
            ci_high: hi.max(p),
            std_error: se,
            n_samples: n,
            n_escaped: 0,
            provenance,
            flags: Vec::new(),
        }
    }

    /// Sample mean with a percentile-bootstrap interval.
    pub fn mean(values: &[f64], stream: StreamBase, provenance: Provenance) -> Estimate {
        let n = values.len();
        let m = mean(values);
        let sd = if n > 1 {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let (lo, hi) = bootstrap_ci(values, mean, stream);
        Estimate {
            value: m,
            ci_low: lo.min(m),
            ci_high: hi.max(m),
            std_error: sd / (n.max(1) as f64).sqrt(),
            n_samples: n as u64,
            n_escaped: 0,
            provenance,
            flags: Vec::new(),
        }
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }

    fn flag(&mut self, flag: Flag) {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
            self.flags.sort();
        }
    }

    fn with_escapes(mut self, escaped: u64) -> Estimate {
        self.n_escaped = escaped;
        if self.n_samples > 0 && escaped as f64 > MAX_ESCAPE_RATE * self.n_samples as f64 {
            self.flag(Flag::EscapeRateExceeded);
        }
        self
    }
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Percentile bootstrap 95% interval of `stat` over resamples of `values`.
pub fn bootstrap_ci(values: &[f64], stat: impl Fn(&[f64]) -> f64, stream: StreamBase) -> (f64, f64) {
    if values.len() < 2 {
        let v = stat(values);
        return (v, v);
    }
    let mut rng = stream.child(u64::MAX).rng(0);
    let mut buf = vec![0.0; values.len()];
    let mut stats: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..values.len())];
            }
            stat(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| stats[((p * (stats.len() - 1) as f64).round() as usize).min(stats.len() - 1)];
    (q(0.025), q(0.975))
}

fn provenance(config: &SimConfig) -> Provenance {
    Provenance { master: config.stream.master, experiment: config.stream.experiment, first_replicate: config.replicate }
}

/// Runs `f` for replicates `0..n` in parallel; output is in index order.
pub fn replicates<T: Send>(n: u64, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

fn require_samples(n: u64) -> Result<(), EstimatorError> {
    if n == 0 {
        return invalid("number of samples must be >= 1");
    }
    Ok(())
}

/// `ℙ(A_t ≠ ∅ for all t ≤ horizon)`. Escaped replicates count as
/// survivors. The value overestimates the survival probability `φ` and is
/// nonincreasing in the horizon.
pub fn estimate_survival(config: &SimConfig, seed: &Seed, n: u64) -> Result<Estimate, EstimatorError> {
    require_samples(n)?;
    config.validate()?;
    let outcomes = replicates(n, |i| {
        let cfg = config.clone().with_replicate(config.replicate + i);
        run_with(&cfg, seed, &mut ()).map(|s| s.termination)
    });
    let mut alive = 0;
    let mut escaped = 0;
    for o in outcomes {
        match o? {
            Termination::Extinct => {}
            Termination::Escaped => {
                alive += 1;
                escaped += 1;
            }
            _ => alive += 1,
        }
    }
    Ok(Estimate::proportion(alive, n, provenance(config)).with_escapes(escaped))
}

/// Mean of `∫₀^horizon |A_t| dt`. Flagged when more than 5% of the total
/// occupation falls in the last 10% of the horizon.
pub fn estimate_susceptibility(config: &SimConfig, seed: &Seed, n: u64) -> Result<Estimate, EstimatorError> {
    require_samples(n)?;
    config.validate()?;
    let runs = replicates(n, |i| {
        let cfg = config.clone().with_replicate(config.replicate + i);
        run_with(&cfg, seed, &mut ())
    });
    let mut occ = Vec::with_capacity(n as usize);
    let (mut late, mut escaped) = (0.0, 0);
    for r in runs {
        let s = r?;
        occ.push(s.occupation);
        late += s.late_occupation;
        escaped += u64::from(s.termination == Termination::Escaped);
    }
    let total: f64 = occ.iter().sum();
    let mut est = Estimate::mean(&occ, config.stream.child(config.replicate), provenance(config)).with_escapes(escaped);
    if total > 0.0 && late > 0.05 * total {
        est.flag(Flag::DivergenceSuspected);
    }
    Ok(est)
}

/// `ℙ(∃y : (y,0) → (o,T))` within the window `B_L × [0,T]`, the finite
/// approximation of the upper invariant measure's density.
pub fn estimate_upper_density(
    kernel: &Kernel,
    delta: f64,
    l: f64,
    t: f64,
    n: u64,
    stream: StreamBase,
) -> Result<Estimate, EstimatorError> {
    require_samples(n)?;
    let domain = SpaceTimeBox::cube(kernel.dim(), l, t)?;
    let sources: Vec<(Site, f64)> = domain.section_sites(0.0).into_iter().map(|x| (x, 0.0)).collect();
    let hits = replicates(n, |i| {
        let w = sample_window(kernel, delta, &domain, &[], &mut stream.rng(i))?;
        Ok::<bool, EstimatorError>(reachable(&w, &sources, &[(Site::ORIGIN, t)]))
    });
    let mut k = 0;
    for h in hits {
        k += u64::from(h?);
    }
    Ok(Estimate::proportion(k, n, Provenance { master: stream.master, experiment: stream.experiment, first_replicate: 0 }))
}

/// Bisection settings for [`estimate_delta_c`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCProtocol {
    pub horizon: f64,
    pub samples: u64,
    /// Survival threshold `τ_s`.
    pub threshold: f64,
    pub max_iter: u32,
    /// Stop once `hi - lo <= rel_tolerance * hi`.
    pub rel_tolerance: f64,
    pub escape_radius: Option<u64>,
    pub stream: StreamBase,
}

impl DeltaCProtocol {
    pub fn new(horizon: f64, samples: u64, stream: StreamBase) -> DeltaCProtocol {
        DeltaCProtocol { horizon, samples, threshold: 0.02, max_iter: 12, rel_tolerance: 0.02, escape_radius: None, stream }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCProbe {
    pub delta: f64,
    pub estimate: Estimate,
}

/// Bracket `[lo, hi]` for the critical healing rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCBracket {
    pub lo: f64,
    pub hi: f64,
    /// `λ_∞`, the initial upper end.
    pub total_rate: f64,
    pub probes: Vec<DeltaCProbe>,
    pub flags: Vec<Flag>,
}

/// Bisection for `δ_c` on `(0, λ_∞]`. A probe moves the lower end when its
/// whole interval lies above the threshold and the upper end when its whole
/// interval lies at or below it; otherwise the search stops and the current
/// bracket is returned with [`Flag::NotSeparated`].
pub fn estimate_delta_c(kernel: &Kernel, protocol: &DeltaCProtocol) -> Result<DeltaCBracket, EstimatorError> {
    require_samples(protocol.samples)?;
    if !(protocol.threshold > 0.0 && protocol.threshold < 1.0) {
        return invalid("threshold must lie in (0,1)");
    }
    let total = kernel.total_rate();
    let (mut lo, mut hi) = (0.0, total);
    let mut probes = Vec::new();
    let mut flags = Vec::new();
    let seed = Seed::singleton(kernel.dim());
    for iter in 0..protocol.max_iter {
        if hi - lo <= protocol.rel_tolerance * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let mut cfg = SimConfig::new(kernel.clone(), mid, protocol.horizon).with_stream(protocol.stream.child(iter as u64));
        cfg.escape_radius = protocol.escape_radius;
        let est = estimate_survival(&cfg, &seed, protocol.samples)?;
        let above = est.ci_low > protocol.threshold;
        let below = est.ci_high <= protocol.threshold;
        probes.push(DeltaCProbe { delta: mid, estimate: est });
        if above {
            lo = mid;
        } else if below {
            hi = mid;
        } else {
            flags.push(Flag::NotSeparated);
            break;
        }
        if iter + 1 == protocol.max_iter && hi - lo > protocol.rel_tolerance * hi {
            flags.push(Flag::IterationLimit);
        }
    }
    Ok(DeltaCBracket { lo, hi, total_rate: total, probes, flags })
}

/// Per-site infected time intervals clipped to a box: the set `I^A_{L,T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfectedRegion {
    domain: SpaceTimeBox,
    intervals: BTreeMap<Site, Vec<Interval>>,
}

impl InfectedRegion {
    pub fn new(domain: SpaceTimeBox, intervals: BTreeMap<Site, Vec<Interval>>) -> InfectedRegion {
        let mut clipped = BTreeMap::new();
        for (x, ivs) in intervals {
            let allowed = domain.time_interval(x);
            let kept: Vec<Interval> = ivs.iter().map(|iv| iv.intersect(&allowed)).filter(|iv| iv.length() > 0.0).collect();
            if !kept.is_empty() {
                clipped.insert(x, kept);
            }
        }
        InfectedRegion { domain, intervals: clipped }
    }

    pub fn domain(&self) -> &SpaceTimeBox {
        &self.domain
    }

    pub fn intervals(&self) -> &BTreeMap<Site, Vec<Interval>> {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn occupation(&self, x: Site) -> f64 {
        self.intervals.get(&x).map_or(0.0, |v| v.iter().map(Interval::length).sum())
    }

    pub fn total_occupation(&self) -> f64 {
        self.intervals.values().flatten().map(Interval::length).sum()
    }
}

/// The infected space-time region of `traj` inside `domain`.
pub fn infected_region(traj: &Trajectory, domain: &SpaceTimeBox) -> InfectedRegion {
    InfectedRegion::new(domain.clone(), traj.intervals())
}

fn overlap(a: &Interval, bs: &[Interval]) -> f64 {
    bs.iter().map(|b| a.intersect(b).length()).sum()
}

/// `E^A_{L,T,R}`: the expected number of infection arrows from the region
/// into the shell, `Σ_x ∫ 1{(x,s) ∈ I} Σ_{y : (y,s) ∈ S} λ_{x,y} ds`.
pub fn expected_arrows(region: &InfectedRegion, kernel: &Kernel, shell: &Shell) -> Result<f64, EstimatorError> {
    if region.domain() != shell.inner() {
        return invalid("region box and shell inner box differ");
    }
    if region.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    if !shell.is_unbounded() {
        let targets: Vec<(Site, Vec<Interval>)> = shell
            .outer()
            .hull_sites()
            .into_iter()
            .map(|y| (y, shell.time_intervals(y)))
            .filter(|(_, ivs)| !ivs.is_empty())
            .collect();
        for (&x, ivs) in region.intervals() {
            for (y, times) in &targets {
                let rate = kernel.rate_at(*y - x);
                if rate > 0.0 {
                    total += rate * ivs.iter().map(|iv| overlap(iv, times)).sum::<f64>();
                }
            }
        }
    } else if shell.face() == Face::All {
        // everything outside the inner box: λ_∞ minus the mass kept inside
        let lam = kernel.total_rate();
        let inside: Vec<(Site, Interval)> =
            region.domain().hull_sites().into_iter().map(|y| (y, region.domain().time_interval(y))).collect();
        for (&x, ivs) in region.intervals() {
            for iv in ivs {
                let mut kept = 0.0;
                for (y, time) in &inside {
                    let rate = kernel.rate_at(*y - x);
                    if rate > 0.0 {
                        kept += rate * iv.intersect(time).length();
                    }
                }
                total += lam * iv.length() - kept;
            }
        }
    } else {
        let table = kernel.sampler()?;
        for (&x, ivs) in region.intervals() {
            for (&off, &rate) in table.offsets().iter().zip(table.rates()) {
                let times = shell.time_intervals(x + off);
                if !times.is_empty() {
                    total += rate * ivs.iter().map(|iv| overlap(iv, &times)).sum::<f64>();
                }
            }
        }
    }
    Ok(total.max(0.0))
}

/// Poisson sample of the arrows from the region that land in the shell,
/// returned as `(target, time)` in time order. The count is Poisson with
/// mean [`expected_arrows`] (up to the kernel's sampling tolerance).
pub fn sample_shell_arrows<R: Rng + ?Sized>(
    region: &InfectedRegion,
    kernel: &Kernel,
    shell: &Shell,
    rng: &mut R,
) -> Result<Vec<(Site, f64)>, EstimatorError> {
    let table = kernel.sampler()?;
    let mut out = Vec::new();
    for (&x, ivs) in region.intervals() {
        for iv in ivs {
            let mean = table.total() * iv.length();
            if mean <= 0.0 {
                continue;
            }
            let count = rand_distr::Distribution::sample(&rand_distr::Poisson::new(mean).expect("positive mean"), rng) as u64;
            for _ in 0..count {
                let t = iv.lo + rng.random::<f64>() * iv.length();
                let y = x + table.sample(rng);
                if shell.contains(y, t) {
                    out.push((y, t));
                }
            }
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Greedy pairwise-separated subset in canonical `(time, site)` order.
pub fn separated_subset(points: &[(Site, f64)], n: u64) -> Vec<(Site, f64)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(Site, f64)> = Vec::new();
    for p in sorted {
        if kept.iter().all(|&q| separated(p, q, n)) {
            kept.push(p);
        }
    }
    kept
}

/// Size of the greedy separated subset: a lower bound on `M^A_{L,T,R}`.
pub fn max_separated(points: &[(Site, f64)], n: u64) -> usize {
    separated_subset(points, n).len()
}

/// Parameters of [`check_extinction_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionBoundSetup {
    pub delta: f64,
    pub l: f64,
    pub t: f64,
    pub k: f64,
    pub samples: u64,
    /// Time after which a still-alive unrestricted run counts as surviving.
    pub horizon: f64,
    pub escape_radius: Option<u64>,
    pub stream: StreamBase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionBoundReport {
    pub k: f64,
    /// `(e(1+λ_∞))^{-k}`.
    pub bound: f64,
    pub samples: u64,
    /// Replicates on which `E_{L,T} + |_L A_T| ≤ k`.
    pub h_count: u64,
    pub extinct: u64,
    pub frequency: f64,
    /// Binomial standard deviation of the frequency under the bound.
    pub sigma: f64,
    pub pass: bool,
    pub n_escaped: u64,
    pub flags: Vec<Flag>,
}

/// `(e(1+λ_∞))^{-k}`.
pub fn extinction_bound(total_rate: f64, k: f64) -> f64 {
    (std::f64::consts::E * (1.0 + total_rate)).powf(-k)
}

/// Minimum number of conditioning replicates for a decision.
pub const MIN_H_REPLICATES: u64 = 100;

/// Audits the conditional-extinction bound: among replicates whose restricted
/// run in `B_L × [0,T]` satisfies `E_{L,T} + |_L A_T| ≤ k`, the unrestricted
/// process on the same graphical construction should die out with frequency
/// at least `(e(1+λ_∞))^{-k}`. Runs still alive at the horizon count as
/// surviving.
pub fn check_extinction_bound(kernel: &Kernel, seed: &Seed, setup: &ExtinctionBoundSetup) -> Result<ExtinctionBoundReport, EstimatorError> {
    require_samples(setup.samples)?;
    if setup.horizon < setup.t {
        return invalid("horizon must be at least T");
    }
    let dim = kernel.dim();
    let domain = SpaceTimeBox::cube(dim, setup.l, setup.t)?;
    let shell = Shell::new(domain.clone(), &vec![f64::INFINITY; dim], Face::All)?;
    let lam = kernel.total_rate();
    let bound = extinction_bound(lam, setup.k);

    let rows = replicates(setup.samples, |i| {
        let lo = SimConfig::new(kernel.clone(), setup.delta, setup.t).with_domain(domain.clone()).with_stream(setup.stream).with_replicate(i);
        let mut hi = SimConfig::new(kernel.clone(), setup.delta, setup.horizon).with_stream(setup.stream).with_replicate(i);
        hi.escape_radius = setup.escape_radius;
        let c = run_coupled(&lo, &hi, seed, seed)?;
        let region = infected_region(&c.lo, &domain);
        let e = expected_arrows(&region, kernel, &shell)?;
        let top = if c.lo.termination() == Termination::Extinct { 0 } else { c.lo.final_set().len() };
        Ok::<_, EstimatorError>((e + top as f64 <= setup.k, c.hi.termination()))
    });
    let (mut h, mut ext, mut esc) = (0u64, 0u64, 0u64);
    for r in rows {
        let (in_h, term) = r?;
        esc += u64::from(term == Termination::Escaped);
        if in_h {
            h += 1;
            ext += u64::from(term == Termination::Extinct);
        }
    }
    let frequency = if h == 0 { 0.0 } else { ext as f64 / h as f64 };
    let sigma = if h == 0 { 0.0 } else { (bound * (1.0 - bound) / h as f64).sqrt() };
    let mut flags = Vec::new();
    if h < MIN_H_REPLICATES {
        flags.push(Flag::Inconclusive);
    }
    if setup.delta < 1.0 {
        flags.push(Flag::BoundAssumesUnitHealing);
    }
    if esc as f64 > MAX_ESCAPE_RATE * setup.samples as f64 {
        flags.push(Flag::EscapeRateExceeded);
    }
    let pass = h >= MIN_H_REPLICATES && frequency >= bound - 3.0 * sigma;
    Ok(ExtinctionBoundReport { k: setup.k, bound, samples: setup.samples, h_count: h, extinct: ext, frequency, sigma, pass, n_escaped: esc, flags })
}

/// Least-squares fit of the log upper tail of extinction times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_ci: (f64, f64),
    /// First and last grid time.
    pub grid: (f64, f64),
    pub n_samples: u64,
    pub n_extinct: u64,
    pub n_escaped: u64,
    pub flags: Vec<Flag>,
}

/// Grid points of the tail fit.
pub const TAIL_GRID_POINTS: usize = 20;

/// Minimum number of extinct replicates for a tail fit.
pub const MIN_EXTINCT: u64 = 200;

/// Fits `log ℙ̂(t ≤ τ < horizon)` against `t` on an even grid over the
/// median to 95th percentile of the observed extinction times.
pub fn extinction_tail(config: &SimConfig, seed: &Seed, n: u64) -> Result<TailFit, EstimatorError> {
    require_samples(n)?;
    config.validate()?;
    let outcomes = replicates(n, |i| {
        let cfg = config.clone().with_replicate(config.replicate + i);
        run_with(&cfg, seed, &mut ()).map(|s| (s.termination, s.end_time))
    });
    let mut times = Vec::new();
    let mut escaped = 0;
    for o in outcomes {
        let (term, t) = o?;
        match term {
            Termination::Extinct => times.push(t),
            Termination::Escaped => escaped += 1,
            _ => {}
        }
    }
    times.sort_by(f64::total_cmp);
    let n_extinct = times.len() as u64;
    let mut flags = Vec::new();
    if escaped as f64 > MAX_ESCAPE_RATE * n as f64 {
        flags.push(Flag::EscapeRateExceeded);
    }
    let empty = |flags: Vec<Flag>| TailFit {
        slope: f64::NAN,
        intercept: f64::NAN,
        r_squared: f64::NAN,
        slope_ci: (f64::NAN, f64::NAN),
        grid: (f64::NAN, f64::NAN),
        n_samples: n,
        n_extinct,
        n_escaped: escaped,
        flags,
    };
    if n_extinct < MIN_EXTINCT {
        flags.push(Flag::Inconclusive);
        return Ok(empty(flags));
    }
    let fit = tail_fit(&times, n);
    let Some((slope, intercept, r2, grid)) = fit else {
        flags.push(Flag::Inconclusive);
        return Ok(empty(flags));
    };
    let ci = bootstrap_ci(
        &times,
        |sample| {
            let mut s = sample.to_vec();
            s.sort_by(f64::total_cmp);
            tail_fit(&s, n).map_or(f64::NAN, |f| f.0)
        },
        config.stream.child(config.replicate),
    );
    Ok(TailFit { slope, intercept, r_squared: r2, slope_ci: ci, grid, n_samples: n, n_extinct, n_escaped: escaped, flags })
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let (i, f) = (h.floor() as usize, h.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// `(slope, intercept, R², grid)` of the log-tail regression on sorted
/// extinction times out of `n` replicates.
fn tail_fit(sorted: &[f64], n: u64) -> Option<(f64, f64, f64, (f64, f64))> {
    let (a, b) = (quantile(sorted, 0.5), quantile(sorted, 0.95));
    if !(b > a) {
        return None;
    }
    let step = (b - a) / (TAIL_GRID_POINTS - 1) as f64;
    let mut xs = Vec::with_capacity(TAIL_GRID_POINTS);
    let mut ys = Vec::with_capacity(TAIL_GRID_POINTS);
    for j in 0..TAIL_GRID_POINTS {
        let t = a + step * j as f64;
        let above = sorted.len() - sorted.partition_point(|&s| s < t);
        if above > 0 {
            xs.push(t);
            ys.push((above as f64 / n as f64).ln());
        }
    }
    let (slope, intercept, r2) = least_squares(&xs, &ys)?;
    Some((slope, intercept, r2, (a, b)))
}

/// Ordinary least squares `y ≈ slope·x + intercept` with `R²`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some((slope, my - slope * mx, r2))
}

/// Stops a run as soon as `A_t ⊄ B_{nθ/2 + tθ}`.
struct Envelope {
    base: f64,
    theta: f64,
    broken: bool,
}

impl Observer for Envelope {
    fn infect(&mut self, t: f64, x: Site, _set: &InfectedSet) -> ControlFlow<()> {
        if x.linf() as f64 > self.base + t * self.theta {
            self.broken = true;
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    }
}

/// Frequency of `{A_t ⊆ B_{nθ/2 + tθ} for all t ≤ horizon}` for a seed
/// `A ⊆ B_n`.
pub fn growth_envelope(kernel: &Kernel, delta: f64, seed: &Seed, theta: f64, horizon: f64, n: u64, stream: StreamBase) -> Result<Estimate, EstimatorError> {
    require_samples(n)?;
    if !(theta >= 0.0 && theta.is_finite()) {
        return invalid("theta must be finite and >= 0");
    }
    let base = seed.radius() as f64 * theta / 2.0;
    let prov = Provenance { master: stream.master, experiment: stream.experiment, first_replicate: 0 };
    let mark = |mut est: Estimate| {
        if !kernel.has_linear_speed_decay() {
            est.flag(Flag::SlowKernelDecay);
        }
        est
    };
    if seed.offsets().iter().any(|x| x.linf() as f64 > base) {
        // the envelope fails already at t = 0
        return Ok(mark(Estimate::proportion(0, n, prov)));
    }
    // any escape lies outside the envelope
    let radius = (base + horizon * theta).ceil().min((i32::MAX / 4) as f64) as u64;
    let cfg = SimConfig::new(kernel.clone(), delta, horizon).with_stream(stream).with_escape_radius(radius);
    cfg.validate()?;
    let held = replicates(n, |i| {
        let mut obs = Envelope { base, theta, broken: false };
        let s = run_with(&cfg.clone().with_replicate(i), seed, &mut obs)?;
        Ok::<bool, EstimatorError>(!obs.broken && s.termination != Termination::Escaped)
    });
    let mut k = 0;
    for h in held {
        k += u64::from(h?);
    }
    Ok(mark(Estimate::proportion(k, n, prov)))
}

/// Result of [`find_growth_speed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSearch {
    pub theta: Option<f64>,
    pub ladder: Vec<(f64, Estimate)>,
}

/// Tries `θ` from `ladder` in order and returns the first whose envelope
/// frequency reaches `target`.
pub fn find_growth_speed(
    kernel: &Kernel,
    delta: f64,
    seed: &Seed,
    ladder: &[f64],
    horizon: f64,
    n: u64,
    target: f64,
    stream: StreamBase,
) -> Result<GrowthSearch, EstimatorError> {
    let mut out = Vec::new();
    for (i, &theta) in ladder.iter().enumerate() {
        let est = growth_envelope(kernel, delta, seed, theta, horizon, n, stream.child(i as u64))?;
        let ok = est.value >= target;
        out.push((theta, est));
        if ok {
            return Ok(GrowthSearch { theta: Some(theta), ladder: out });
        }
    }
    Ok(GrowthSearch { theta: None, ladder: out })
}

/// Slope of `t ↦ log E|A_t|` on a time grid, the empirical exponential
/// growth or decay rate of the expected infected-set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRate {
    pub rate: f64,
    pub r_squared: f64,
    pub times: Vec<f64>,
    pub mean_sizes: Vec<f64>,
}

pub fn size_growth_rate(config: &SimConfig, seed: &Seed, n: u64, grid_points: usize) -> Result<SizeRate, EstimatorError> {
    require_samples(n)?;
    if grid_points < 2 {
        return invalid("need at least two grid points");
    }
    let end = config.end_time();
    let times: Vec<f64> = (1..=grid_points).map(|j| end * j as f64 / grid_points as f64).collect();
    let sizes = replicates(n, |i| {
        let tr = run(&config.clone().with_replicate(config.replicate + i), seed)?;
        Ok::<Vec<f64>, EstimatorError>(times.iter().map(|&t| tr.state_at(t).len() as f64).collect())
    });
    let mut sums = vec![0.0; grid_points];
    for s in sizes {
        for (acc, v) in sums.iter_mut().zip(s?) {
            *acc += v;
        }
    }
    let mean_sizes: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = times.iter().zip(&mean_sizes).filter(|(_, m)| **m > 0.0).map(|(t, m)| (*t, m.ln())).unzip();
    let (rate, _, r2) = least_squares(&xs, &ys).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    Ok(SizeRate { rate, r_squared: r2, times, mean_sizes })
}
