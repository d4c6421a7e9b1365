//! Finite space-time block conditions and their parameter search.
//!
//! Every condition has the same shape: run the process restricted to a box
//! from a seed set `A`, and ask whether some translate `A(x)` is fully
//! infected at a time tied to an anchor point `(x, s)`. A
//! [`TranslateMonitor`] tracks, for each anchor `x`, how many sites of
//! `A(x)` are infected, so each state change costs `O(|A|)`.
//!
//! | condition | restriction            | anchors                       | lag |
//! |-----------|------------------------|-------------------------------|-----|
//! | C1        | `B_{2L} × [0,T]`       | `B_L^+` at time `T`           | 0   |
//! | C2        | `B_{2(1+r)L} × [0,T]`  | face of `S_{L,T,(1+2r)L}`     | 0   |
//! | C3        | `B^θ_{2L,T+1}`         | top of `B^θ_{L,T}`            | 1   |
//! | C4        | `B^θ_{2(1+r)LT,T+1}`   | tilted face of `S^θ_{L,T,2rLT}` | 1 |
//!
//! A lag of 1 means the translate must be infected at time `s + 1`.

use std::ops::ControlFlow;

use rand::Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::engine::{run_with, Flip, InfectedSet, Observer, SimConfig, Trajectory};
use crate::estimators::{replicates, wilson, Estimate, EstimatorError, Provenance};
use crate::geometry::{Face, Interval, Orthant, Seed, Shell, Site, SpaceTimeBox};
use crate::kernel::Kernel;
use crate::rng::StreamBase;

/// Block parameters `(A, L, T, r, θ_d, ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub dim: usize,
    /// Seed set `A` as integer coordinates.
    pub seed: Vec<Vec<i64>>,
    /// Half-widths `L_i`.
    pub l: Vec<f64>,
    pub t: f64,
    pub r: f64,
    /// Tilt of the last coordinate (C3/C4 only).
    #[serde(default)]
    pub theta: f64,
    pub epsilon: f64,
    /// Overrides the shell width of C2/C4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shell_width: Option<f64>,
    /// Overrides the restriction half-width of C2/C4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restriction_width: Option<f64>,
}

impl BlockSpec {
    pub fn new(seed: &Seed, l: f64, t: f64, r: f64, epsilon: f64) -> BlockSpec {
        let dim = seed.dim();
        BlockSpec {
            dim,
            seed: seed.offsets().iter().map(|x| x.coords(dim).iter().map(|&c| c as i64).collect()).collect(),
            l: vec![l; dim],
            t,
            r,
            theta: 0.0,
            epsilon,
            shell_width: None,
            restriction_width: None,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> BlockSpec {
        self.theta = theta;
        self
    }

    pub fn seed_set(&self) -> Result<Seed, EstimatorError> {
        let sites = self.seed.iter().map(|c| Site::from_coords(c)).collect::<Result<Vec<_>, _>>()?;
        Ok(Seed::new(self.dim, sites)?)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidArgument(m.into()));
        if self.l.len() != self.dim {
            return bad("L must have one entry per dimension");
        }
        if self.l.iter().any(|l| !(*l >= 0.0 && l.is_finite())) || !(self.t >= 0.0 && self.t.is_finite()) {
            return bad("L and T must be finite and >= 0");
        }
        if !(self.r > 1.0 && self.r.is_finite()) {
            return bad("r must exceed 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0,1)");
        }
        if !self.theta.is_finite() {
            return bad("theta must be finite");
        }
        self.seed_set()?;
        Ok(())
    }

    fn tilt(&self) -> Vec<f64> {
        let mut th = vec![0.0; self.dim];
        th[self.dim - 1] = self.theta;
        th
    }

    fn scaled_l(&self, f: f64) -> Vec<f64> {
        self.l.iter().map(|l| l * f).collect()
    }
}

/// A restricted run together with the anchor time-sets of one condition.
#[derive(Debug, Clone)]
pub struct BlockPlan {
    pub domain: SpaceTimeBox,
    pub horizon: f64,
    pub seed: Seed,
    /// Anchor `x` ↦ times at which `A(x)` must be fully infected (lag
    /// already applied).
    pub anchors: FxHashMap<Site, Vec<Interval>>,
}

fn point_anchors(sites: Vec<Site>, time: f64) -> FxHashMap<Site, Vec<Interval>> {
    sites.into_iter().map(|x| (x, vec![Interval::new(time, time)])).collect()
}

fn shell_anchors(shell: &Shell, lag: f64) -> FxHashMap<Site, Vec<Interval>> {
    let search = shell.outer().with_orthant(Orthant::Full);
    search
        .hull_sites()
        .into_iter()
        .filter_map(|x| {
            let ivs = shell.time_intervals(x);
            (!ivs.is_empty()).then(|| (x, ivs.into_iter().map(|iv| Interval::new(iv.lo + lag, iv.hi + lag)).collect()))
        })
        .collect()
}

/// C1: some `A(x)`, `x ∈ B_L^+`, fully infected at `T` in the process
/// restricted to `B_{2L}`.
pub fn c1_plan(spec: &BlockSpec) -> Result<BlockPlan, EstimatorError> {
    spec.validate()?;
    let zero = vec![0.0; spec.dim];
    let domain = SpaceTimeBox::new(&spec.scaled_l(2.0), spec.t, &zero, Orthant::Full)?;
    let anchor_box = SpaceTimeBox::new(&spec.l, spec.t, &zero, Orthant::Positive)?;
    Ok(BlockPlan { domain, horizon: spec.t, seed: spec.seed_set()?, anchors: point_anchors(anchor_box.section_sites(spec.t), spec.t) })
}

/// C2: some `A(x)` fully infected at a time `t` with `(x,t)` on face
/// `(axis, ±)` of the shell around `B^+_{L,T}`, restricted to
/// `B_{2(1+r)L}`.
pub fn c2_plan(spec: &BlockSpec, axis: usize, positive: bool) -> Result<BlockPlan, EstimatorError> {
    spec.validate()?;
    let zero = vec![0.0; spec.dim];
    let restriction = spec.restriction_width.map_or_else(|| spec.scaled_l(2.0 * (1.0 + spec.r)), |w| vec![w; spec.dim]);
    let width = spec.shell_width.map_or_else(|| spec.scaled_l(1.0 + 2.0 * spec.r), |w| vec![w; spec.dim]);
    let domain = SpaceTimeBox::new(&restriction, spec.t, &zero, Orthant::Full)?;
    let inner = SpaceTimeBox::new(&spec.l, spec.t, &zero, Orthant::Positive)?;
    let shell = Shell::new(inner, &width, Face::Axis { axis, positive })?;
    Ok(BlockPlan { domain, horizon: spec.t, seed: spec.seed_set()?, anchors: shell_anchors(&shell, 0.0) })
}

/// C3: some `A(x)` with `x` in the top of `B^θ_{L,T}` fully infected at
/// `T + 1` in the process restricted to `B^θ_{2L,T+1}`.
pub fn c3_plan(spec: &BlockSpec) -> Result<BlockPlan, EstimatorError> {
    spec.validate()?;
    let tilt = spec.tilt();
    let domain = SpaceTimeBox::new(&spec.scaled_l(2.0), spec.t + 1.0, &tilt, Orthant::Full)?;
    let inner = SpaceTimeBox::new(&spec.l, spec.t, &tilt, Orthant::Full)?;
    Ok(BlockPlan {
        domain,
        horizon: spec.t + 1.0,
        seed: spec.seed_set()?,
        anchors: point_anchors(inner.section_sites(spec.t), spec.t + 1.0),
    })
}

/// C4: some `A(x)` fully infected at `t + 1` with `(x,t)` on the tilted face
/// `±` of the shell around `B^θ_{L,T}`, restricted to `B^θ_{2(1+r)LT,T+1}`.
pub fn c4_plan(spec: &BlockSpec, positive: bool) -> Result<BlockPlan, EstimatorError> {
    spec.validate()?;
    let tilt = spec.tilt();
    let restriction = spec.restriction_width.map_or_else(|| spec.scaled_l(2.0 * (1.0 + spec.r) * spec.t), |w| vec![w; spec.dim]);
    let width = spec.shell_width.map_or_else(|| spec.scaled_l(2.0 * spec.r * spec.t), |w| vec![w; spec.dim]);
    let domain = SpaceTimeBox::new(&restriction, spec.t + 1.0, &tilt, Orthant::Full)?;
    let inner = SpaceTimeBox::new(&spec.l, spec.t, &tilt, Orthant::Full)?;
    let shell = Shell::new(inner, &width, Face::Tilted { positive })?;
    Ok(BlockPlan { domain, horizon: spec.t + 1.0, seed: spec.seed_set()?, anchors: shell_anchors(&shell, 1.0) })
}

/// Tracks `|A(x) ∩ A_t|` for every anchor `x` and reports whether some
/// translate is fully infected at one of its anchor times.
pub struct TranslateMonitor<'a> {
    offsets: &'a [Site],
    anchors: &'a FxHashMap<Site, Vec<Interval>>,
    counts: FxHashMap<Site, u32>,
    full_since: FxHashMap<Site, f64>,
    success: bool,
}

impl<'a> TranslateMonitor<'a> {
    pub fn new(plan: &'a BlockPlan) -> TranslateMonitor<'a> {
        TranslateMonitor {
            offsets: plan.seed.offsets(),
            anchors: &plan.anchors,
            counts: FxHashMap::default(),
            full_since: FxHashMap::default(),
            success: false,
        }
    }

    fn hits(&self, x: Site, from: f64, to: f64) -> bool {
        self.anchors[&x].iter().any(|iv| from.max(iv.lo) <= to.min(iv.hi))
    }

    fn add(&mut self, y: Site, t: f64) -> ControlFlow<()> {
        let need = self.offsets.len() as u32;
        for &a in self.offsets {
            let x = y - a;
            if !self.anchors.contains_key(&x) {
                continue;
            }
            let c = self.counts.entry(x).or_insert(0);
            *c += 1;
            if *c == need {
                self.full_since.insert(x, t);
                if self.hits(x, t, t) {
                    self.success = true;
                    return ControlFlow::Break(());
                }
            }
        }
        ControlFlow::Continue(())
    }

    fn remove(&mut self, y: Site, t: f64) -> ControlFlow<()> {
        let need = self.offsets.len() as u32;
        for &a in self.offsets {
            let x = y - a;
            let Some(&c) = self.counts.get(&x) else {
                continue;
            };
            if c == need {
                let s = self.full_since.remove(&x).expect("full translate has a start time");
                if self.hits(x, s, t) {
                    self.success = true;
                    return ControlFlow::Break(());
                }
            }
            self.counts.insert(x, c - 1);
        }
        ControlFlow::Continue(())
    }

    /// Closes the still-open full intervals at `end` and returns the
    /// outcome.
    pub fn finish(&mut self, end: f64) -> bool {
        if !self.success {
            self.success = self.full_since.iter().any(|(&x, &s)| self.hits(x, s, end));
        }
        self.success
    }
}

impl Observer for TranslateMonitor<'_> {
    fn start(&mut self, set: &InfectedSet) -> ControlFlow<()> {
        let mut sites = set.sorted();
        sites.dedup();
        for y in sites {
            self.add(y, 0.0)?;
        }
        ControlFlow::Continue(())
    }

    fn infect(&mut self, t: f64, x: Site, _set: &InfectedSet) -> ControlFlow<()> {
        self.add(x, t)
    }

    fn heal(&mut self, t: f64, x: Site, _set: &InfectedSet) -> ControlFlow<()> {
        self.remove(x, t)
    }
}

/// Runs one replicate of a plan; returns the event indicator and the number
/// of simulated race events.
pub fn run_plan(kernel: &Kernel, delta: f64, plan: &BlockPlan, stream: StreamBase, replicate: u64) -> Result<(bool, u64), EstimatorError> {
    let cfg = SimConfig::new(kernel.clone(), delta, plan.horizon)
        .with_domain(plan.domain.clone())
        .with_stream(stream)
        .with_replicate(replicate);
    let mut mon = TranslateMonitor::new(plan);
    let summary = run_with(&cfg, &plan.seed, &mut mon)?;
    let ok = mon.finish(summary.end_time);
    Ok((ok, summary.attempts))
}

/// Replays a recorded trajectory through a [`TranslateMonitor`]. The
/// trajectory should come from a run restricted to `plan.domain`.
pub fn plan_holds(plan: &BlockPlan, traj: &Trajectory) -> bool {
    let mut mon = TranslateMonitor::new(plan);
    let initial = InfectedSet::from_sites(traj.initial().iter().copied());
    if mon.start(&initial).is_break() {
        return true;
    }
    let empty = InfectedSet::from_sites([]);
    for e in traj.events() {
        let step = match e.flip {
            Flip::Infect => mon.infect(e.t, e.site, &empty),
            Flip::Recover => mon.heal(e.t, e.site, &empty),
        };
        if step.is_break() {
            return true;
        }
    }
    mon.finish(traj.end_time())
}

/// Frequency of a block event with the number of race events spent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub estimate: Estimate,
    pub events: u64,
}

/// Monte Carlo frequency of the plan's event over `n` replicates.
pub fn check_plan(kernel: &Kernel, delta: f64, plan: &BlockPlan, n: u64, stream: StreamBase) -> Result<BlockCheck, EstimatorError> {
    if n == 0 {
        return Err(EstimatorError::InvalidArgument("number of samples must be >= 1".into()));
    }
    let rows = replicates(n, |i| run_plan(kernel, delta, plan, stream, i));
    let (mut k, mut events) = (0, 0);
    for r in rows {
        let (ok, ev) = r?;
        k += u64::from(ok);
        events += ev;
    }
    let prov = Provenance { master: stream.master, experiment: stream.experiment, first_replicate: 0 };
    Ok(BlockCheck { estimate: Estimate::proportion(k, n, prov), events })
}

pub fn check_c1(kernel: &Kernel, delta: f64, spec: &BlockSpec, n: u64, stream: StreamBase) -> Result<BlockCheck, EstimatorError> {
    check_plan(kernel, delta, &c1_plan(spec)?, n, stream)
}

pub fn check_c2(
    kernel: &Kernel,
    delta: f64,
    spec: &BlockSpec,
    axis: usize,
    positive: bool,
    n: u64,
    stream: StreamBase,
) -> Result<BlockCheck, EstimatorError> {
    check_plan(kernel, delta, &c2_plan(spec, axis, positive)?, n, stream)
}

pub fn check_c3(kernel: &Kernel, delta: f64, spec: &BlockSpec, n: u64, stream: StreamBase) -> Result<BlockCheck, EstimatorError> {
    check_plan(kernel, delta, &c3_plan(spec)?, n, stream)
}

pub fn check_c4(kernel: &Kernel, delta: f64, spec: &BlockSpec, positive: bool, n: u64, stream: StreamBase) -> Result<BlockCheck, EstimatorError> {
    check_plan(kernel, delta, &c4_plan(spec, positive)?, n, stream)
}

/// Smallest `n` whose Wilson interval at frequency `1 - ε` has half-width at
/// most `ε/2`.
pub fn samples_for_epsilon(epsilon: f64) -> u64 {
    let p = 1.0 - epsilon;
    let mut n = 1u64;
    loop {
        let k = (p * n as f64).round() as u64;
        let (lo, hi) = wilson(k, n);
        if (hi - lo) / 2.0 <= epsilon / 2.0 {
            return n;
        }
        n += 1;
    }
}

/// Smallest success count out of `n` whose Wilson lower bound reaches
/// `1 - ε`, if any.
fn required_successes(n: u64, epsilon: f64) -> Option<u64> {
    (0..=n).find(|&k| wilson(k, n).0 >= 1.0 - epsilon)
}

/// Settings of [`search_block_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub epsilon: f64,
    pub r: f64,
    /// `L` values tried in order.
    pub l_ladder: Vec<f64>,
    /// `T = factor · L` for each factor.
    pub t_factors: Vec<f64>,
    /// Seed catalogue, tried in order at every `(L, T)` rung.
    pub catalogue: Vec<SeedShape>,
    /// Cap on simulated race events.
    pub budget: u64,
    /// Replicates per condition; `None` uses [`samples_for_epsilon`].
    pub samples: Option<u64>,
    /// Replicates per chunk of the early-abort rule.
    pub chunk: u64,
    pub stream: StreamBase,
}

impl SearchConfig {
    /// Doubling ladder `L = 4, …, 256` with `T ∈ {2L, 4L}` and
    /// [`default_catalogue`].
    pub fn new(kernel: &Kernel, epsilon: f64, stream: StreamBase) -> SearchConfig {
        SearchConfig {
            epsilon,
            r: 2.0,
            l_ladder: (2..=8).map(|k| f64::from(1u32 << k)).collect(),
            t_factors: vec![2.0, 4.0],
            catalogue: default_catalogue(kernel),
            budget: 1_000_000_000,
            samples: None,
            chunk: 16,
            stream,
        }
    }
}

/// Seed sets of the search catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "shape")]
pub enum SeedShape {
    /// `B_n = [-n, n]^d`.
    Cube { radius: u32 },
    /// `count` sites spaced `spacing` apart along the first axis, starting
    /// at the origin.
    Comb { count: u32, spacing: u32 },
    /// The origin and the `count` offsets with the largest kernel rates.
    Greedy { count: u32 },
}

impl SeedShape {
    pub fn build(&self, kernel: &Kernel) -> Result<Seed, EstimatorError> {
        let dim = kernel.dim();
        let seed = match *self {
            SeedShape::Cube { radius } => Seed::cube(dim, radius),
            SeedShape::Comb { count, spacing } => {
                let sites = (0..count.max(1)).map(|j| Site::unit(0, (j * spacing) as i32));
                Seed::new(dim, sites.collect::<Vec<_>>())?
            }
            SeedShape::Greedy { count } => {
                let table = kernel.sampler()?;
                let mut order: Vec<usize> = (0..table.len()).collect();
                order.sort_by(|&a, &b| table.rates()[b].total_cmp(&table.rates()[a]).then(table.offsets()[a].cmp(&table.offsets()[b])));
                let mut sites = vec![Site::ORIGIN];
                sites.extend(order.into_iter().take(count as usize).map(|i| table.offsets()[i]));
                Seed::new(dim, sites)?
            }
        };
        Ok(seed)
    }
}

/// Boxes `B_0 … B_3`, then sparse combs of 4 and 5 sites at spacing 8.
/// Non-symmetric kernels also get greedy most-probable-target seeds.
///
/// A box translate needs a run of consecutive infected sites while a comb
/// with wide spacing only needs a few roughly independent ones, so combs
/// reach high survival without making the translate rare.
pub fn default_catalogue(kernel: &Kernel) -> Vec<SeedShape> {
    let mut cat: Vec<SeedShape> = (0..=3).map(|radius| SeedShape::Cube { radius }).collect();
    cat.extend([SeedShape::Comb { count: 4, spacing: 8 }, SeedShape::Comb { count: 5, spacing: 8 }]);
    if !kernel.is_symmetric() {
        cat.extend((1..=3).map(|count| SeedShape::Greedy { count }));
    }
    cat
}

/// Frequencies measured for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub spec: BlockSpec,
    pub c1: f64,
    /// Frequency per C2 face `(axis, positive)`, measured up to the first
    /// failing face.
    pub c2: Vec<(usize, bool, f64)>,
    pub passed: bool,
    pub events: u64,
}

/// Certificate of a successful search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCertificate {
    pub spec: BlockSpec,
    pub samples: u64,
    pub c1: Estimate,
    pub c2: Vec<(usize, bool, Estimate)>,
    pub events_used: u64,
    pub candidates_tried: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "outcome")]
pub enum SearchOutcome {
    Certified(BlockCertificate),
    Failed {
        best_c1: f64,
        best_c2: f64,
        events_used: u64,
        candidates_tried: usize,
        budget_exhausted: bool,
        candidates: Vec<CandidateReport>,
    },
}

impl SearchOutcome {
    pub fn certificate(&self) -> Option<&BlockCertificate> {
        match self {
            SearchOutcome::Certified(c) => Some(c),
            SearchOutcome::Failed { .. } => None,
        }
    }
}

struct Staged {
    estimate: Estimate,
    passed: bool,
    events: u64,
    out_of_budget: bool,
}

/// Runs `n` replicates in chunks and stops once `need` successes are out of
/// reach or `budget` events are spent.
fn staged_check(kernel: &Kernel, delta: f64, plan: &BlockPlan, n: u64, need: u64, chunk: u64, budget: u64, stream: StreamBase) -> Result<Staged, EstimatorError> {
    let (mut k, mut done, mut events) = (0u64, 0u64, 0u64);
    let mut out_of_budget = false;
    while done < n {
        let m = chunk.max(1).min(n - done);
        let rows = replicates(m, |i| run_plan(kernel, delta, plan, stream, done + i));
        for r in rows {
            let (ok, ev) = r?;
            k += u64::from(ok);
            events += ev;
        }
        done += m;
        if k + (n - done) < need {
            break;
        }
        if events >= budget && done < n {
            out_of_budget = true;
            break;
        }
    }
    let prov = Provenance { master: stream.master, experiment: stream.experiment, first_replicate: 0 };
    Ok(Staged { estimate: Estimate::proportion(k, done, prov), passed: done == n && k >= need, events, out_of_budget })
}

/// Ladder search for block parameters satisfying C1 and every C2 face with
/// Wilson lower bound at least `1 - ε`. Seeds wider than `L` are skipped.
pub fn search_block_params(kernel: &Kernel, delta: f64, cfg: &SearchConfig) -> Result<SearchOutcome, EstimatorError> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(EstimatorError::InvalidArgument("delta must be finite and >= 0".into()));
    }
    let dim = kernel.dim();
    let n = cfg.samples.unwrap_or_else(|| samples_for_epsilon(cfg.epsilon));
    let Some(need) = required_successes(n, cfg.epsilon) else {
        return Err(EstimatorError::InvalidArgument(format!("{n} samples cannot certify epsilon {}", cfg.epsilon)));
    };
    let seeds = cfg.catalogue.iter().map(|s| s.build(kernel)).collect::<Result<Vec<_>, _>>()?;
    let faces: Vec<(usize, bool)> = (0..dim).flat_map(|i| [(i, true), (i, false)]).collect();
    let mut events = 0u64;
    let mut tried = 0usize;
    let mut reports = Vec::new();
    let (mut best_c1, mut best_c2) = (0.0f64, 0.0f64);
    let mut exhausted = false;

    'ladder: for &l in &cfg.l_ladder {
        for &f in &cfg.t_factors {
            for seed in &seeds {
                if seed.radius() as f64 > l {
                    continue;
                }
                if events >= cfg.budget {
                    exhausted = true;
                    break 'ladder;
                }
                let spec = BlockSpec::new(seed, l, f * l, cfg.r, cfg.epsilon);
                let base = cfg.stream.child(tried as u64);
                tried += 1;
                let before = events;
                let c1 = staged_check(kernel, delta, &c1_plan(&spec)?, n, need, cfg.chunk, cfg.budget - events, base.child(0))?;
                events += c1.events;
                exhausted |= c1.out_of_budget;
                best_c1 = best_c1.max(c1.estimate.value);
                let mut report = CandidateReport { spec: spec.clone(), c1: c1.estimate.value, c2: Vec::new(), passed: false, events: 0 };
                let mut c2s = Vec::new();
                let mut all = c1.passed;
                if !exhausted {
                    let mut worst = 1.0f64;
                    for (j, &(axis, positive)) in faces.iter().enumerate() {
                        let plan = c2_plan(&spec, axis, positive)?;
                        let left = cfg.budget.saturating_sub(events);
                        let c2 = staged_check(kernel, delta, &plan, n, need, cfg.chunk, left, base.child(1 + j as u64))?;
                        events += c2.events;
                        exhausted |= c2.out_of_budget;
                        worst = worst.min(c2.estimate.value);
                        report.c2.push((axis, positive, c2.estimate.value));
                        c2s.push((axis, positive, c2.estimate));
                        if !c2.passed {
                            all = false;
                            break;
                        }
                        if exhausted {
                            break;
                        }
                    }
                    best_c2 = best_c2.max(worst);
                }
                report.passed = all;
                report.events = events - before;
                reports.push(report);
                if all {
                    return Ok(SearchOutcome::Certified(BlockCertificate {
                        spec,
                        samples: n,
                        c1: c1.estimate,
                        c2: c2s,
                        events_used: events,
                        candidates_tried: tried,
                    }));
                }
                if exhausted {
                    break 'ladder;
                }
            }
        }
    }
    Ok(SearchOutcome::Failed { best_c1, best_c2, events_used: events, candidates_tried: tried, budget_exhausted: exhausted, candidates: reports })
}

/// Re-measures C1 and every C2 face of a spec at `n` replicates on a fresh
/// stream.
pub fn revalidate(kernel: &Kernel, delta: f64, spec: &BlockSpec, n: u64, stream: StreamBase) -> Result<(BlockCheck, Vec<(usize, bool, BlockCheck)>), EstimatorError> {
    let c1 = check_c1(kernel, delta, spec, n, stream.child(0))?;
    let mut faces = Vec::new();
    for axis in 0..spec.dim {
        for (j, positive) in [true, false].into_iter().enumerate() {
            let c = check_c2(kernel, delta, spec, axis, positive, n, stream.child(1 + 2 * axis as u64 + j as u64))?;
            faces.push((axis, positive, c));
        }
    }
    Ok((c1, faces))
}

/// Survival to row `rows` of oriented site percolation on
/// `{(x, k) : x + k even, |x| ≤ width}` with open probability `p`, started
/// from the open origin; row `k + 1` site `x` is wet when it is open and
/// `x - 1` or `x + 1` is wet in row `k`.
pub fn oriented_percolation_demo(p: f64, rows: u32, width: u32, n: u64, stream: StreamBase) -> Result<Estimate, EstimatorError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(EstimatorError::InvalidArgument("p must lie in [0,1]".into()));
    }
    if n == 0 {
        return Err(EstimatorError::InvalidArgument("number of samples must be >= 1".into()));
    }
    let w = width as usize;
    let survived = replicates(n, |i| {
        let mut rng = stream.rng(i);
        // index j stands for x = j - w
        let mut wet = vec![false; 2 * w + 1];
        wet[w] = true;
        let mut next = wet.clone();
        for _ in 0..rows {
            let mut any = false;
            for j in 0..wet.len() {
                let fed = (j > 0 && wet[j - 1]) || (j + 1 < wet.len() && wet[j + 1]);
                next[j] = fed && rng.random::<f64>() < p;
                any |= next[j];
            }
            std::mem::swap(&mut wet, &mut next);
            if !any {
                return false;
            }
        }
        true
    });
    let k = survived.iter().filter(|&&s| s).count() as u64;
    Ok(Estimate::proportion(k, n, Provenance { master: stream.master, experiment: stream.experiment, first_replicate: 0 }))
}
