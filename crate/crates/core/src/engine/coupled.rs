//! Monotone coupling of two ordered processes on shared randomness.
//!
//! Every site infected in the upper process carries four independent event
//! streams: base healings at rate `δ_hi` (both processes), surplus healings
//! at rate `δ_lo - δ_hi` (lower process only), base arrows at rate `λ_lo`
//! (both) and surplus arrows at rate `λ_hi - λ_lo` (upper only). Each marginal
//! has the correct law and `A_lo(t) ⊆ A_hi(t)` holds surely.

use rand::Rng;
use rand_distr::Exp1;

use super::trajectory::{Flip, FlipEvent, Trajectory};
use super::{EngineError, InfectedSet, SimConfig, Tally, Termination};
use crate::geometry::{Orthant, Seed, Site, SpaceTimeBox};
use crate::kernel::difference_table;

/// Output of [`run_coupled`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub lo: Trajectory,
    pub hi: Trajectory,
    /// Number of checks at which `A_lo ⊄ A_hi` (always 0 for a correct
    /// coupling).
    pub violations: u64,
    /// Number of state changes audited.
    pub audited: u64,
}

struct Side {
    dim: usize,
    initial: Vec<Site>,
    set: InfectedSet,
    events: Vec<FlipEvent>,
    tally: Tally,
    end: f64,
    done: Option<(Termination, f64)>,
}

impl Side {
    fn new(seed: &Seed, end: f64) -> Side {
        let set = InfectedSet::from_sites(seed.offsets().iter().copied());
        let tally = Tally::new(end, &set);
        Side { dim: seed.dim(), initial: seed.offsets().to_vec(), set, events: Vec::new(), tally, end, done: None }
    }

    fn active(&self) -> bool {
        self.done.is_none()
    }

    fn infect(&mut self, t: f64, y: Site) -> bool {
        if !self.set.insert(y) {
            return false;
        }
        self.tally.flips += 1;
        self.tally.max_radius = self.tally.max_radius.max(y.linf());
        self.events.push(FlipEvent { t, site: y, flip: Flip::Infect });
        true
    }

    fn heal(&mut self, t: f64, x: Site) -> bool {
        if !self.set.remove(x) {
            return false;
        }
        self.tally.flips += 1;
        self.events.push(FlipEvent { t, site: x, flip: Flip::Recover });
        if self.set.is_empty() {
            self.done = Some((Termination::Extinct, t));
        }
        true
    }

    fn finish(self) -> Trajectory {
        let (term, t) = self.done.expect("side finished");
        let summary = self.tally.summary(term, t, self.set.len());
        Trajectory::new(self.dim, self.initial, self.events, self.set.sorted(), summary)
    }
}

fn box_within(lo: &SpaceTimeBox, hi: &SpaceTimeBox) -> bool {
    lo.dim() == hi.dim()
        && lo.half_widths().iter().zip(hi.half_widths()).all(|(a, b)| a <= b)
        && lo.height() <= hi.height()
        && (hi.orthant() == Orthant::Full || lo.orthant() == Orthant::Positive)
}

fn check_comparable(lo: &SimConfig, hi: &SimConfig, a_lo: &Seed, a_hi: &Seed) -> Result<(), EngineError> {
    let fail = |m: &str| Err(EngineError::NotComparable(m.into()));
    if lo.stream != hi.stream || lo.replicate != hi.replicate {
        return fail("coupled runs must share the random stream");
    }
    if hi.delta > lo.delta {
        return fail("upper process must not heal faster (delta_hi <= delta_lo)");
    }
    if !lo.kernel.dominated_by(&hi.kernel)? {
        return fail("kernel_lo must be pointwise <= kernel_hi");
    }
    if a_lo.offsets().iter().any(|x| a_hi.offsets().binary_search(x).is_err()) {
        return fail("A_lo must be a subset of A_hi");
    }
    for d in [&lo.domain, &hi.domain].into_iter().flatten() {
        if !d.is_axis_aligned() {
            return fail("coupled runs support axis-aligned domains only");
        }
    }
    match (&lo.domain, &hi.domain) {
        (_, None) => {}
        (None, Some(_)) => return fail("lower process unrestricted but upper restricted"),
        (Some(a), Some(b)) => {
            if !box_within(a, b) {
                return fail("domain_lo must lie inside domain_hi");
            }
        }
    }
    if lo.end_time() > hi.end_time() {
        return fail("lower process must not outlast the upper one");
    }
    Ok(())
}

/// Runs two processes on one graphical construction so that
/// `A_lo(t) ⊆ A_hi(t)` for all `t`.
pub fn run_coupled(lo: &SimConfig, hi: &SimConfig, a_lo: &Seed, a_hi: &Seed) -> Result<CoupledRun, EngineError> {
    lo.validate()?;
    hi.validate()?;
    super::validate_seed(lo, a_lo)?;
    super::validate_seed(hi, a_hi)?;
    check_comparable(lo, hi, a_lo, a_hi)?;

    let base = lo.kernel.sampler()?;
    let hi_table = hi.kernel.sampler()?;
    let surplus = difference_table(&base, &hi_table);
    let escape = match hi.domain {
        Some(_) => None,
        None => Some(hi.escape_radius_for(a_hi)?),
    };

    let (d_lo, d_hi) = (lo.delta, hi.delta);
    let lam_lo = base.total();
    let lam_surplus = surplus.as_ref().map_or(0.0, |s| s.total());
    let per_site = d_lo + lam_lo + lam_surplus;

    let mut rng = lo.rng();
    let mut l = Side::new(a_lo, lo.end_time());
    let mut h = Side::new(a_hi, hi.end_time());
    let mut violations = 0u64;
    let mut audited = 0u64;
    let mut t = 0.0;

    loop {
        if h.set.is_empty() {
            h.done = Some((Termination::Extinct, t));
            if l.active() {
                violations += u64::from(!l.set.is_empty());
                l.done = Some((Termination::Extinct, t));
            }
            break;
        }
        let rate = h.set.len() as f64 * per_site;
        let t_next = t + rng.sample::<f64, _>(Exp1) / rate;

        if l.active() && t_next > l.end {
            l.tally.hold(l.set.len(), t, l.end);
            l.done = Some((Termination::Horizon, l.end));
        }
        if t_next > h.end {
            h.tally.hold(h.set.len(), t, h.end);
            h.done = Some((Termination::Horizon, h.end));
            break;
        }
        if l.active() {
            l.tally.hold(l.set.len(), t, t_next);
            l.tally.attempts += 1;
        }
        h.tally.hold(h.set.len(), t, t_next);
        h.tally.attempts += 1;
        t = t_next;

        let x = h.set.pick(&mut rng);
        let u = rng.random::<f64>() * per_site;
        let lo_has_x = l.active() && l.set.contains(x);
        if u < d_hi {
            h.heal(t, x);
            if lo_has_x {
                l.heal(t, x);
            }
            audited += 1;
            violations += u64::from(l.active() && l.set.contains(x));
            continue;
        }
        if u < d_lo {
            if lo_has_x {
                l.heal(t, x);
            }
            continue;
        }
        let (y, shared) = if u < d_lo + lam_lo || surplus.is_none() {
            (x + base.sample(&mut rng), true)
        } else {
            (x + surplus.as_ref().unwrap().sample(&mut rng), false)
        };
        if !h.set.contains(y) && hi.domain.as_ref().is_none_or(|d| d.section_contains(y, t)) {
            if let Some(limit) = escape {
                if y.linf() > limit {
                    h.done = Some((Termination::Escaped, t));
                    if l.active() {
                        l.done = Some((Termination::Escaped, t));
                    }
                    break;
                }
            }
            h.infect(t, y);
        }
        if shared && lo_has_x && lo.domain.as_ref().is_none_or(|d| d.section_contains(y, t)) && l.infect(t, y) {
            audited += 1;
            violations += u64::from(!h.set.contains(y));
        }
    }

    Ok(CoupledRun { lo: l.finish(), hi: h.finish(), violations, audited })
}
