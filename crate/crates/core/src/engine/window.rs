//! Explicit graphical construction on a finite space-time box.
//!
//! A [`GraphicalWindow`] holds the healing events of every site of an
//! axis-aligned box together with the infection arrows leaving the box's
//! sites and landing in the box or in one of its designated shells. Active
//! paths are evaluated by a single sweep over the events in time order.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rustc_hash::{FxHashMap, FxHashSet};

use super::trajectory::{Flip, FlipEvent, Trajectory};
use super::{EngineError, InfectedSet, Tally, Termination};
use crate::geometry::{Seed, Shell, Site, SpaceTimeBox};
use crate::kernel::Kernel;

/// One event of the graphical construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowEvent {
    Heal { t: f64, site: Site },
    Arrow { t: f64, from: Site, to: Site },
}

impl WindowEvent {
    pub fn time(&self) -> f64 {
        match *self {
            WindowEvent::Heal { t, .. } | WindowEvent::Arrow { t, .. } => t,
        }
    }
}

/// Raw event in forward time; heals have `from == to`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RawEvent {
    t: f64,
    arrow: bool,
    from: Site,
    to: Site,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphicalWindow {
    domain: SpaceTimeBox,
    shells: Vec<Shell>,
    raw: Vec<RawEvent>,
    /// When set, the window is read with `t ↦ T - t` and arrows reversed.
    reversed: bool,
}

impl GraphicalWindow {
    /// Window from explicit event lists; events are sorted by
    /// `(time, heal-before-arrow, site)`.
    pub fn from_events(
        domain: SpaceTimeBox,
        shells: Vec<Shell>,
        heals: impl IntoIterator<Item = (f64, Site)>,
        arrows: impl IntoIterator<Item = (f64, Site, Site)>,
    ) -> Result<GraphicalWindow, EngineError> {
        if !domain.is_axis_aligned() {
            return Err(EngineError::InvalidConfig("graphical windows need an axis-aligned box".into()));
        }
        let mut raw: Vec<RawEvent> = heals
            .into_iter()
            .map(|(t, x)| RawEvent { t, arrow: false, from: x, to: x })
            .chain(arrows.into_iter().map(|(t, from, to)| RawEvent { t, arrow: true, from, to }))
            .collect();
        let height = domain.height();
        if raw.iter().any(|e| !(e.t >= 0.0 && e.t <= height)) {
            return Err(EngineError::InvalidConfig("window event outside the box's time extent".into()));
        }
        raw.sort_by(|a, b| {
            a.t.total_cmp(&b.t).then(a.arrow.cmp(&b.arrow)).then(a.from.cmp(&b.from)).then(a.to.cmp(&b.to))
        });
        Ok(GraphicalWindow { domain, shells, raw, reversed: false })
    }

    pub fn domain(&self) -> &SpaceTimeBox {
        &self.domain
    }

    pub fn shells(&self) -> &[Shell] {
        &self.shells
    }

    pub fn height(&self) -> f64 {
        self.domain.height()
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn heal_count(&self) -> usize {
        self.raw.iter().filter(|e| !e.arrow).count()
    }

    pub fn arrow_count(&self) -> usize {
        self.raw.iter().filter(|e| e.arrow).count()
    }

    fn view(&self, e: &RawEvent) -> WindowEvent {
        let t = if self.reversed { self.domain.height() - e.t } else { e.t };
        match (e.arrow, self.reversed) {
            (false, _) => WindowEvent::Heal { t, site: e.from },
            (true, false) => WindowEvent::Arrow { t, from: e.from, to: e.to },
            (true, true) => WindowEvent::Arrow { t, from: e.to, to: e.from },
        }
    }

    /// Events in (effective) time order.
    pub fn events(&self) -> Box<dyn Iterator<Item = WindowEvent> + '_> {
        if self.reversed {
            Box::new(self.raw.iter().rev().map(|e| self.view(e)))
        } else {
            Box::new(self.raw.iter().map(|e| self.view(e)))
        }
    }

    fn in_box(&self, x: Site, t: f64) -> bool {
        self.domain.contains(x, t)
    }

    /// One tab-separated line per event: `H t site` or `A t from to`.
    pub fn write_lines<W: Write>(&self, mut w: W) -> io::Result<()> {
        let dim = self.domain.dim();
        let coords = |x: Site| x.coords(dim).iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        for e in self.events() {
            match e {
                WindowEvent::Heal { t, site } => writeln!(w, "H\t{t:?}\t{}", coords(site))?,
                WindowEvent::Arrow { t, from, to } => writeln!(w, "A\t{t:?}\t{}\t{}", coords(from), coords(to))?,
            }
        }
        Ok(())
    }
}

/// Samples the healing events of every box site at rate `δ` and the arrows
/// `x → y` at rate `λ_{o,y-x}` for sources in the box and targets in the box
/// or one of `shells`.
pub fn sample_window<R: Rng + ?Sized>(
    kernel: &Kernel,
    delta: f64,
    domain: &SpaceTimeBox,
    shells: &[Shell],
    rng: &mut R,
) -> Result<GraphicalWindow, EngineError> {
    if domain.dim() != kernel.dim() {
        return Err(EngineError::DimensionMismatch { expected: kernel.dim(), got: domain.dim() });
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(EngineError::InvalidConfig(format!("delta must be finite and >= 0, got {delta}")));
    }
    let table = kernel.sampler()?;
    let height = domain.height();
    let mut heals = Vec::new();
    let mut arrows = Vec::new();
    let poisson = |mean: f64, rng: &mut R| -> u64 {
        if mean > 0.0 {
            Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
        } else {
            0
        }
    };
    for x in domain.section_sites(0.0) {
        for _ in 0..poisson(delta * height, rng) {
            heals.push((rng.random::<f64>() * height, x));
        }
        for _ in 0..poisson(table.total() * height, rng) {
            let t = rng.random::<f64>() * height;
            let y = x + table.sample(rng);
            if domain.section_contains(y, t) || shells.iter().any(|s| s.contains(y, t)) {
                arrows.push((t, x, y));
            }
        }
    }
    GraphicalWindow::from_events(domain.clone(), shells.to_vec(), heals, arrows)
}

/// Time reflection `t ↦ T - t` with every arrow reversed. Applying it twice
/// returns the original window exactly.
pub fn reverse_window(window: &GraphicalWindow) -> GraphicalWindow {
    GraphicalWindow { reversed: !window.reversed, ..window.clone() }
}

enum Probe {
    Source(Site),
    Target(Site),
}

/// Whether some source `(x, s)` is joined to some target `(y, t)` by an
/// active path inside the window. Targets in a shell count as reached once
/// an arrow from the reachable set lands on them no later than the target
/// time.
pub fn reachable(window: &GraphicalWindow, sources: &[(Site, f64)], targets: &[(Site, f64)]) -> bool {
    let mut probes: Vec<(f64, u8, Probe)> = Vec::with_capacity(sources.len() + targets.len());
    probes.extend(sources.iter().map(|&(x, s)| (s, 0, Probe::Source(x))));
    probes.extend(targets.iter().map(|&(y, s)| (s, 1, Probe::Target(y))));
    probes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut sources_left = sources.len();

    let mut live: FxHashSet<Site> = FxHashSet::default();
    let mut shell_hits: FxHashMap<Site, f64> = FxHashMap::default();
    let shell_hit = |hits: &FxHashMap<Site, f64>, y: Site, s: f64| {
        !window.in_box(y, s) && hits.get(&y).is_some_and(|&t| t <= s)
    };
    let mut events = window.events().peekable();
    let mut probes = probes.into_iter().peekable();

    while let Some(&(s, class, _)) = probes.peek() {
        // sources before events before targets at equal times
        let event_first = events.peek().is_some_and(|e| e.time() < s || (e.time() == s && class == 1));
        if event_first {
            match events.next().unwrap() {
                WindowEvent::Heal { site, .. } => {
                    live.remove(&site);
                }
                WindowEvent::Arrow { t, from, to } => {
                    if live.contains(&from) {
                        if window.in_box(to, t) {
                            live.insert(to);
                        } else {
                            shell_hits.entry(to).or_insert(t);
                        }
                    }
                }
            }
        } else {
            match probes.next().unwrap() {
                (s, _, Probe::Source(x)) => {
                    sources_left -= 1;
                    if window.in_box(x, s) {
                        live.insert(x);
                    }
                }
                (s, _, Probe::Target(y)) => {
                    let hit = if window.in_box(y, s) { live.contains(&y) } else { shell_hit(&shell_hits, y, s) };
                    if hit {
                        return true;
                    }
                }
            }
        }
        if live.is_empty() && sources_left == 0 {
            // nothing can spread any more; only recorded shell landings count
            return probes.any(|(s, _, p)| matches!(p, Probe::Target(y) if shell_hit(&shell_hits, y, s)));
        }
    }
    false
}

/// The process restricted to the window's box, read off the graphical
/// construction.
pub fn run_via_window(window: &GraphicalWindow, seed: &Seed) -> Result<Trajectory, EngineError> {
    if let Some(&x) = seed.offsets().iter().find(|&&x| !window.in_box(x, 0.0)) {
        return Err(EngineError::SeedOutsideDomain(x));
    }
    let height = window.height();
    let mut set = InfectedSet::from_sites(seed.offsets().iter().copied());
    let mut tally = Tally::new(height, &set);
    let mut flips = Vec::new();
    let mut t = 0.0;
    for e in window.events() {
        if set.is_empty() {
            break;
        }
        let te = e.time();
        match e {
            WindowEvent::Heal { site, .. } => {
                if set.contains(site) {
                    tally.hold(set.len(), t, te);
                    t = te;
                    set.remove(site);
                    tally.flips += 1;
                    flips.push(FlipEvent { t, site, flip: Flip::Recover });
                }
            }
            WindowEvent::Arrow { from, to, .. } => {
                if set.contains(from) && !set.contains(to) && window.in_box(to, te) {
                    tally.hold(set.len(), t, te);
                    t = te;
                    set.insert(to);
                    tally.flips += 1;
                    tally.max_radius = tally.max_radius.max(to.linf());
                    flips.push(FlipEvent { t, site: to, flip: Flip::Infect });
                }
            }
        }
        tally.attempts += 1;
    }
    let summary = if set.is_empty() {
        tally.summary(Termination::Extinct, t, 0)
    } else {
        tally.hold(set.len(), t, height);
        tally.summary(Termination::Horizon, height, set.len())
    };
    Ok(Trajectory::new(seed.dim(), seed.offsets().to_vec(), flips, set.sorted(), summary))
}
