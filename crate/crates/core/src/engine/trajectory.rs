use std::collections::BTreeMap;
use std::io::{self, Write};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::{InfectedSet, Observer, RunSummary, Termination};
use crate::geometry::{Interval, Seed, Site};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flip {
    Infect,
    Recover,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipEvent {
    pub t: f64,
    pub site: Site,
    pub flip: Flip,
}

/// A complete realisation of one run: the initial set, every state change in
/// time order and the end state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    initial: Vec<Site>,
    events: Vec<FlipEvent>,
    final_set: Vec<Site>,
    summary: RunSummary,
}

impl Trajectory {
    pub(crate) fn new(dim: usize, mut initial: Vec<Site>, events: Vec<FlipEvent>, mut final_set: Vec<Site>, summary: RunSummary) -> Trajectory {
        initial.sort_unstable();
        final_set.sort_unstable();
        Trajectory { dim, initial, events, final_set, summary }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn initial(&self) -> &[Site] {
        &self.initial
    }

    pub fn events(&self) -> &[FlipEvent] {
        &self.events
    }

    /// Sorted end state.
    pub fn final_set(&self) -> &[Site] {
        &self.final_set
    }

    pub fn summary(&self) -> &RunSummary {
        &self.summary
    }

    pub fn termination(&self) -> Termination {
        self.summary.termination
    }

    pub fn end_time(&self) -> f64 {
        self.summary.end_time
    }

    /// `τ^A`, if the run died out.
    pub fn extinction_time(&self) -> Option<f64> {
        (self.summary.termination == Termination::Extinct).then_some(self.summary.end_time)
    }

    /// `τ(y)`: first time `y` is infected (0 for initial sites).
    pub fn first_infection_time(&self, y: Site) -> Option<f64> {
        if self.initial.binary_search(&y).is_ok() {
            return Some(0.0);
        }
        self.events.iter().find(|e| e.site == y && e.flip == Flip::Infect).map(|e| e.t)
    }

    /// Sorted state after all events at times `<= t`.
    pub fn state_at(&self, t: f64) -> Vec<Site> {
        let mut set = InfectedSet::from_sites(self.initial.iter().copied());
        for e in self.events.iter().take_while(|e| e.t <= t) {
            match e.flip {
                Flip::Infect => set.insert(e.site),
                Flip::Recover => set.remove(e.site),
            };
        }
        set.sorted()
    }

    /// Per-site infected intervals `[start, end]` within `[0, end_time]`.
    pub fn intervals(&self) -> BTreeMap<Site, Vec<Interval>> {
        let mut open: BTreeMap<Site, f64> = self.initial.iter().map(|&x| (x, 0.0)).collect();
        let mut out: BTreeMap<Site, Vec<Interval>> = BTreeMap::new();
        for e in &self.events {
            match e.flip {
                Flip::Infect => {
                    open.insert(e.site, e.t);
                }
                Flip::Recover => {
                    if let Some(s) = open.remove(&e.site) {
                        out.entry(e.site).or_default().push(Interval::new(s, e.t));
                    }
                }
            }
        }
        let end = self.end_time();
        for (x, s) in open {
            out.entry(x).or_default().push(Interval::new(s, end));
        }
        out
    }

    /// Line-delimited dump: a header line, then one `t<TAB>coords<TAB>±`
    /// line per event.
    pub fn write_lines<W: Write>(&self, mut w: W) -> io::Result<()> {
        let coords = |x: &Site| x.coords(self.dim).iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        let init: Vec<String> = self.initial.iter().map(coords).collect();
        writeln!(w, "# initial {}", init.join(" "))?;
        for e in &self.events {
            let sign = match e.flip {
                Flip::Infect => '+',
                Flip::Recover => '-',
            };
            writeln!(w, "{:?}\t{}\t{}", e.t, coords(&e.site), sign)?;
        }
        writeln!(w, "# end {:?} {:?}", self.end_time(), self.termination())
    }
}

/// Observer that records every state change.
pub(crate) struct Recorder {
    dim: usize,
    initial: Vec<Site>,
    events: Vec<FlipEvent>,
    current: InfectedSet,
}

impl Recorder {
    pub fn new(seed: &Seed) -> Recorder {
        Recorder { dim: seed.dim(), initial: seed.offsets().to_vec(), events: Vec::new(), current: InfectedSet::default() }
    }

    pub fn finish(self, summary: RunSummary) -> Trajectory {
        Trajectory::new(self.dim, self.initial, self.events, self.current.sorted(), summary)
    }
}

impl Observer for Recorder {
    fn start(&mut self, set: &InfectedSet) -> ControlFlow<()> {
        self.current = set.clone();
        ControlFlow::Continue(())
    }

    fn infect(&mut self, t: f64, x: Site, _set: &InfectedSet) -> ControlFlow<()> {
        self.events.push(FlipEvent { t, site: x, flip: Flip::Infect });
        self.current.insert(x);
        ControlFlow::Continue(())
    }

    fn heal(&mut self, t: f64, x: Site, _set: &InfectedSet) -> ControlFlow<()> {
        self.events.push(FlipEvent { t, site: x, flip: Flip::Recover });
        self.current.remove(x);
        ControlFlow::Continue(())
    }
}
