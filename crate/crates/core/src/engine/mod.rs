//! Event-driven simulation of the contact process and its restrictions.
//!
//! [`run`] is an exact exponential race on the infected set: with `m`
//! infected sites the next event arrives at rate `m(δ + Λ)`, where `Λ` is the
//! total rate of the kernel's sampling table. A uniformly chosen infected
//! site then heals with probability `δ/(δ+Λ)` or otherwise sends an arrow
//! along an offset drawn from the kernel; arrows onto infected sites or
//! outside the domain change nothing.

mod coupled;
mod trajectory;
pub mod window;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::ops::ControlFlow;

use rand::Rng;
use rand_distr::Exp1;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Seed, Site, SpaceTimeBox};
use crate::kernel::{Kernel, KernelError, SamplingTable};
use crate::rng::{SimRng, StreamBase};

pub use coupled::{run_coupled, CoupledRun};
pub use trajectory::{Flip, FlipEvent, Trajectory};
pub use window::{reachable, reverse_window, run_via_window, sample_window, GraphicalWindow, WindowEvent};

/// Safety factor of the default escape radius.
pub const ESCAPE_SAFETY: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("seed site {0:?} lies outside the domain at time 0")]
    SeedOutsideDomain(Site),
    #[error("seed dimension {got} differs from kernel dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("configurations are not comparable: {0}")]
    NotComparable(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Parameters of one simulated replicate.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub kernel: Kernel,
    /// Healing rate `δ`.
    pub delta: f64,
    /// Space-time restriction; `None` runs on all of `Z^d`.
    pub domain: Option<SpaceTimeBox>,
    pub horizon: f64,
    /// `ℓ∞` radius beyond which an unrestricted run is stopped as escaped.
    /// `None` selects [`default_escape_radius`].
    pub escape_radius: Option<u64>,
    pub stream: StreamBase,
    pub replicate: u64,
}

impl SimConfig {
    pub fn new(kernel: Kernel, delta: f64, horizon: f64) -> SimConfig {
        SimConfig {
            kernel,
            delta,
            domain: None,
            horizon,
            escape_radius: None,
            stream: StreamBase::new(0, 0),
            replicate: 0,
        }
    }

    pub fn with_domain(mut self, domain: SpaceTimeBox) -> SimConfig {
        self.domain = Some(domain);
        self
    }

    pub fn with_escape_radius(mut self, radius: u64) -> SimConfig {
        self.escape_radius = Some(radius);
        self
    }

    pub fn with_stream(mut self, stream: StreamBase) -> SimConfig {
        self.stream = stream;
        self
    }

    pub fn with_replicate(mut self, replicate: u64) -> SimConfig {
        self.replicate = replicate;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(EngineError::InvalidConfig(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(EngineError::InvalidConfig(format!("horizon must be finite and >= 0, got {}", self.horizon)));
        }
        if let Some(d) = &self.domain {
            if d.dim() != self.kernel.dim() {
                return Err(EngineError::DimensionMismatch { expected: self.kernel.dim(), got: d.dim() });
            }
        }
        self.kernel.sampler()?;
        Ok(())
    }

    /// Time at which the run stops if nothing else happens first.
    pub fn end_time(&self) -> f64 {
        match &self.domain {
            Some(d) => self.horizon.min(d.height()),
            None => self.horizon,
        }
    }

    /// Escape radius in effect for an unrestricted run from `seed`.
    pub fn escape_radius_for(&self, seed: &Seed) -> Result<u64, EngineError> {
        match self.escape_radius {
            Some(r) => Ok(r),
            None => {
                let lam = self.kernel.sampler()?.total();
                Ok(default_escape_radius(seed.radius(), self.horizon, self.delta, lam))
            }
        }
    }

    pub fn rng(&self) -> SimRng {
        self.stream.rng(self.replicate)
    }
}

/// `seed radius + horizon·(δ + Λ)·4`, capped well inside the lattice
/// coordinate range.
pub fn default_escape_radius(seed_radius: u64, horizon: f64, delta: f64, total_rate: f64) -> u64 {
    let reach = (horizon * (delta + total_rate) * ESCAPE_SAFETY).ceil();
    let cap = (i32::MAX / 4) as f64;
    (seed_radius as f64 + reach).min(cap) as u64
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Extinct,
    Horizon,
    /// An infection landed beyond the escape radius; the replicate is
    /// right-censored.
    Escaped,
    /// An observer requested an early stop.
    Stopped,
}

/// Scalar summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub termination: Termination,
    pub end_time: f64,
    /// Number of state changes (infections and recoveries).
    pub flips: u64,
    /// Number of race events including no-op arrows.
    pub attempts: u64,
    pub final_size: usize,
    /// `∫ |A_t| dt` over `[0, end_time]`.
    pub occupation: f64,
    /// The part of `occupation` accumulated after 90% of the horizon.
    pub late_occupation: f64,
    /// Largest `ℓ∞` norm of any site ever infected.
    pub max_radius: u64,
}

impl RunSummary {
    pub fn survived(&self) -> bool {
        self.termination != Termination::Extinct
    }
}

/// The infected set with O(1) membership, insertion, removal and uniform
/// sampling.
#[derive(Debug, Clone, Default)]
pub struct InfectedSet {
    sites: Vec<Site>,
    index: FxHashMap<Site, u32>,
}

impl InfectedSet {
    pub fn from_sites(sites: impl IntoIterator<Item = Site>) -> InfectedSet {
        let mut s = InfectedSet::default();
        for x in sites {
            s.insert(x);
        }
        s
    }

    #[inline]
    pub fn contains(&self, x: Site) -> bool {
        self.index.contains_key(&x)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Members in unspecified order.
    pub fn as_slice(&self) -> &[Site] {
        &self.sites
    }

    pub fn sorted(&self) -> Vec<Site> {
        let mut v = self.sites.clone();
        v.sort_unstable();
        v
    }

    pub(crate) fn insert(&mut self, x: Site) -> bool {
        if self.index.contains_key(&x) {
            return false;
        }
        self.index.insert(x, self.sites.len() as u32);
        self.sites.push(x);
        true
    }

    pub(crate) fn remove(&mut self, x: Site) -> bool {
        let Some(i) = self.index.remove(&x) else {
            return false;
        };
        let i = i as usize;
        self.sites.swap_remove(i);
        if i < self.sites.len() {
            self.index.insert(self.sites[i], i as u32);
        }
        true
    }

    #[inline]
    pub(crate) fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> Site {
        self.sites[rng.random_range(0..self.sites.len())]
    }
}

/// Callbacks fired after each state change of a run. Returning
/// `ControlFlow::Break` stops the run with [`Termination::Stopped`].
pub trait Observer {
    fn start(&mut self, _set: &InfectedSet) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }

    fn infect(&mut self, _t: f64, _x: Site, _set: &InfectedSet) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }

    fn heal(&mut self, _t: f64, _x: Site, _set: &InfectedSet) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

impl Observer for () {}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn start(&mut self, set: &InfectedSet) -> ControlFlow<()> {
        self.0.start(set)?;
        self.1.start(set)
    }

    fn infect(&mut self, t: f64, x: Site, set: &InfectedSet) -> ControlFlow<()> {
        self.0.infect(t, x, set)?;
        self.1.infect(t, x, set)
    }

    fn heal(&mut self, t: f64, x: Site, set: &InfectedSet) -> ControlFlow<()> {
        self.0.heal(t, x, set)?;
        self.1.heal(t, x, set)
    }
}

/// Running totals shared by the single and coupled simulators.
#[derive(Debug, Clone)]
pub(crate) struct Tally {
    pub occupation: f64,
    pub late_occupation: f64,
    pub late_from: f64,
    pub flips: u64,
    pub attempts: u64,
    pub max_radius: u64,
}

impl Tally {
    pub fn new(horizon: f64, initial: &InfectedSet) -> Tally {
        Tally {
            occupation: 0.0,
            late_occupation: 0.0,
            late_from: 0.9 * horizon,
            flips: 0,
            attempts: 0,
            max_radius: initial.as_slice().iter().map(Site::linf).max().unwrap_or(0),
        }
    }

    /// Adds `size·(t1 - t0)` to the occupation integrals.
    #[inline]
    pub fn hold(&mut self, size: usize, t0: f64, t1: f64) {
        let n = size as f64;
        self.occupation += n * (t1 - t0);
        if t1 > self.late_from {
            self.late_occupation += n * (t1 - t0.max(self.late_from));
        }
    }

    pub fn summary(&self, termination: Termination, end_time: f64, final_size: usize) -> RunSummary {
        RunSummary {
            termination,
            end_time,
            flips: self.flips,
            attempts: self.attempts,
            final_size,
            occupation: self.occupation,
            late_occupation: self.late_occupation,
            max_radius: self.max_radius,
        }
    }
}

fn validate_seed(config: &SimConfig, seed: &Seed) -> Result<(), EngineError> {
    if seed.dim() != config.kernel.dim() {
        return Err(EngineError::DimensionMismatch { expected: config.kernel.dim(), got: seed.dim() });
    }
    if let Some(d) = &config.domain {
        if let Some(&x) = seed.offsets().iter().find(|&&x| !d.contains(x, 0.0)) {
            return Err(EngineError::SeedOutsideDomain(x));
        }
    }
    Ok(())
}

/// Exact simulation from `seed`, recording every state change.
pub fn run(config: &SimConfig, seed: &Seed) -> Result<Trajectory, EngineError> {
    let mut rec = trajectory::Recorder::new(seed);
    let summary = run_with(config, seed, &mut rec)?;
    Ok(rec.finish(summary))
}

/// Exact simulation reporting state changes to `observer`; returns only the
/// summary.
pub fn run_with<O: Observer + ?Sized>(config: &SimConfig, seed: &Seed, observer: &mut O) -> Result<RunSummary, EngineError> {
    config.validate()?;
    validate_seed(config, seed)?;
    let table = config.kernel.sampler()?;
    let escape = match config.domain {
        Some(_) => None,
        None => Some(config.escape_radius_for(seed)?),
    };
    let mut rng = config.rng();
    Ok(simulate(config, &table, escape, seed, &mut rng, observer))
}

fn simulate<O: Observer + ?Sized>(
    config: &SimConfig,
    table: &SamplingTable,
    escape: Option<u64>,
    seed: &Seed,
    rng: &mut SimRng,
    observer: &mut O,
) -> RunSummary {
    let delta = config.delta;
    let lam = table.total();
    let per_site = delta + lam;
    let p_heal = delta / per_site;
    let end = config.end_time();
    let domain = config.domain.as_ref();
    let tilted = domain.is_some_and(|d| !d.is_axis_aligned());

    let mut set = InfectedSet::from_sites(seed.offsets().iter().copied());
    let mut tally = Tally::new(end, &set);
    // deterministic exits of a moving domain, ordered by (time, site)
    let mut exits: BinaryHeap<Reverse<(OrdF64, Site)>> = BinaryHeap::new();
    if tilted {
        let d = domain.unwrap();
        for &x in set.as_slice() {
            exits.push(Reverse((OrdF64(d.time_interval(x).hi), x)));
        }
    }
    let mut t = 0.0;
    if observer.start(&set).is_break() {
        return tally.summary(Termination::Stopped, t, set.len());
    }

    loop {
        if set.is_empty() {
            return tally.summary(Termination::Extinct, t, 0);
        }
        let rate = set.len() as f64 * per_site;
        let dt: f64 = rng.sample::<f64, _>(Exp1) / rate;
        let t_next = t + dt;

        if tilted {
            if let Some(&Reverse((OrdF64(te), x))) = exits.peek() {
                if te <= t_next && te <= end {
                    exits.pop();
                    if !set.contains(x) {
                        continue;
                    }
                    tally.hold(set.len(), t, te);
                    t = te;
                    set.remove(x);
                    tally.flips += 1;
                    if observer.heal(t, x, &set).is_break() {
                        return tally.summary(Termination::Stopped, t, set.len());
                    }
                    // memoryless race: the pending event is redrawn
                    continue;
                }
            }
        }

        if t_next > end {
            tally.hold(set.len(), t, end);
            return tally.summary(Termination::Horizon, end, set.len());
        }
        tally.hold(set.len(), t, t_next);
        t = t_next;
        tally.attempts += 1;

        let x = set.pick(rng);
        if rng.random::<f64>() < p_heal {
            set.remove(x);
            tally.flips += 1;
            if observer.heal(t, x, &set).is_break() {
                return tally.summary(Termination::Stopped, t, set.len());
            }
            continue;
        }
        let y = x + table.sample(rng);
        if set.contains(y) {
            continue;
        }
        if let Some(d) = domain {
            if !d.section_contains(y, t) {
                continue;
            }
        }
        let r = y.linf();
        if let Some(limit) = escape {
            if r > limit {
                return tally.summary(Termination::Escaped, t, set.len());
            }
        }
        tally.max_radius = tally.max_radius.max(r);
        set.insert(y);
        tally.flips += 1;
        if tilted {
            exits.push(Reverse((OrdF64(domain.unwrap().time_interval(y).hi), y)));
        }
        if observer.infect(t, y, &set).is_break() {
            return tally.summary(Termination::Stopped, t, set.len());
        }
    }
}

/// Totally ordered float for heap keys.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
