//! Experiment configuration files.
//!
//! A config is a TOML document with a top-level header, an optional
//! `[kernel]` table and an `[operation]` table selected by its `name` key.
//! Rates are per unit time, lengths are in lattice units and times are in
//! process time.

use std::path::{Path, PathBuf};

use lrcp_core::geometry::{Seed, Site};
use lrcp_core::kernel::{Kernel, KernelSpec};
use lrcp_core::rng::StreamBase;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A config that failed to parse or violates a precondition.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field<T>(name: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Field { field: name.into(), message: message.into() })
}

fn nonneg(name: &str, v: f64) -> Result<(), ConfigError> {
    if !(v >= 0.0 && v.is_finite()) {
        return field(name, format!("must be finite and >= 0, got {v}"));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return field(name, format!("must be finite and > 0, got {v}"));
    }
    Ok(())
}

fn open_unit(name: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v < 1.0) {
        return field(name, format!("must lie in (0,1), got {v}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub master_seed: u64,
    /// Replicates per estimate; each operation has its own default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    /// JSONL file the records are appended to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    pub operation: Operation,
}

/// Cube `B_L × [0, height]` the process is confined to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Restriction {
    pub half_width: f64,
    /// Defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShellFace {
    All,
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    C1,
    C2,
    C3,
    C4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepTarget {
    Survival,
    Susceptibility,
}

/// Conditional-extinction audit attached to an extinction-tail run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundCheck {
    pub ks: Vec<f64>,
    pub l: f64,
    pub t: f64,
}

fn default_threshold() -> f64 {
    0.02
}

fn default_max_iter() -> u32 {
    12
}

fn default_rel_tolerance() -> f64 {
    0.02
}

fn default_target() -> f64 {
    0.99
}

fn default_r() -> f64 {
    2.0
}

fn default_epsilons() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

fn default_face() -> ShellFace {
    ShellFace::All
}

fn default_conditions() -> Vec<Condition> {
    vec![Condition::C1, Condition::C2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Operation {
    /// Single runs; one record per replicate with the run summary.
    Simulate {
        delta: f64,
        horizon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<Vec<Vec<i64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restrict: Option<Restriction>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        escape_radius: Option<u64>,
        /// Writes the flip events of replicate 0 here.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trajectory: Option<PathBuf>,
    },
    Survival {
        delta: f64,
        horizon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<Vec<Vec<i64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restrict: Option<Restriction>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        escape_radius: Option<u64>,
    },
    Susceptibility {
        delta: f64,
        horizon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<Vec<Vec<i64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restrict: Option<Restriction>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        escape_radius: Option<u64>,
    },
    DeltaC {
        horizon: f64,
        #[serde(default = "default_threshold")]
        threshold: f64,
        #[serde(default = "default_max_iter")]
        max_iter: u32,
        #[serde(default = "default_rel_tolerance")]
        rel_tolerance: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        escape_radius: Option<u64>,
    },
    UpperDensity {
        delta: f64,
        l: f64,
        t: f64,
    },
    /// Expected and sampled arrows from a restricted run into a shell.
    Arrows {
        delta: f64,
        l: f64,
        t: f64,
        shell_width: f64,
        #[serde(default = "default_face")]
        face: ShellFace,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<Vec<Vec<i64>>>,
        /// Separation scale of the arrow family; defaults to the seed radius.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        separation: Option<u64>,
    },
    ExtinctionTail {
        delta: f64,
        horizon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<Vec<Vec<i64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        escape_radius: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<BoundCheck>,
    },
    Growth {
        delta: f64,
        horizon: f64,
        thetas: Vec<f64>,
        #[serde(default = "default_target")]
        target: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<Vec<Vec<i64>>>,
    },
    FstcCheck {
        delta: f64,
        l: f64,
        t: f64,
        #[serde(default = "default_r")]
        r: f64,
        #[serde(default)]
        theta: f64,
        epsilon: f64,
        #[serde(default = "default_conditions")]
        conditions: Vec<Condition>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<Vec<Vec<i64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shell_width: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restriction_width: Option<f64>,
    },
    FstcSearch {
        delta: f64,
        /// Tried in order; the search stops at the first failure.
        #[serde(default = "default_epsilons")]
        epsilons: Vec<f64>,
        #[serde(default = "default_r")]
        r: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        l_ladder: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_factors: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        chunk: Option<u64>,
        /// Re-measures a certificate at this multiple of its sample count.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        revalidate: Option<u64>,
    },
    OpDemo {
        p: f64,
        rows: u32,
        width: u32,
    },
    /// One estimate per grid point over healing rates or truncation levels.
    Sweep {
        target: SweepTarget,
        horizon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deltas: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncations: Option<Vec<u64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<Vec<Vec<i64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        escape_radius: Option<u64>,
    },
}

impl Operation {
    pub fn name(&self) -> &'static str {
        match self {
            Operation::Simulate { .. } => "simulate",
            Operation::Survival { .. } => "survival",
            Operation::Susceptibility { .. } => "susceptibility",
            Operation::DeltaC { .. } => "delta-c",
            Operation::UpperDensity { .. } => "upper-density",
            Operation::Arrows { .. } => "arrows",
            Operation::ExtinctionTail { .. } => "extinction-tail",
            Operation::Growth { .. } => "growth",
            Operation::FstcCheck { .. } => "fstc-check",
            Operation::FstcSearch { .. } => "fstc-search",
            Operation::OpDemo { .. } => "op-demo",
            Operation::Sweep { .. } => "sweep",
        }
    }

    fn seed_sites(&self) -> Option<&Vec<Vec<i64>>> {
        match self {
            Operation::Simulate { seed, .. }
            | Operation::Survival { seed, .. }
            | Operation::Susceptibility { seed, .. }
            | Operation::Arrows { seed, .. }
            | Operation::ExtinctionTail { seed, .. }
            | Operation::Growth { seed, .. }
            | Operation::FstcCheck { seed, .. }
            | Operation::Sweep { seed, .. } => seed.as_ref(),
            _ => None,
        }
    }

    fn default_samples(&self) -> u64 {
        match self {
            Operation::Simulate { .. } => 1,
            Operation::FstcCheck { .. } => 0,
            _ => 1000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Random streams of this experiment.
    pub fn stream(&self) -> StreamBase {
        StreamBase::named(self.master_seed, &self.id)
    }

    /// Replicates per estimate. For `fstc-check`, 0 means "derive from ε".
    pub fn sample_count(&self) -> u64 {
        self.samples.unwrap_or_else(|| self.operation.default_samples())
    }

    pub fn kernel(&self) -> Result<Kernel, ConfigError> {
        let Some(spec) = &self.kernel else {
            return field("kernel", format!("operation `{}` needs a kernel", self.operation.name()));
        };
        spec.build().map_err(|e| ConfigError::Field { field: "kernel".into(), message: e.to_string() })
    }

    pub fn seed(&self, dim: usize) -> Result<Seed, ConfigError> {
        let Some(sites) = self.operation.seed_sites() else {
            return Ok(Seed::singleton(dim));
        };
        if sites.is_empty() {
            return field("operation.seed", "seed set must be nonempty");
        }
        let mut out = Vec::with_capacity(sites.len());
        for s in sites {
            if s.len() != dim {
                return field("operation.seed", format!("site {s:?} has dimension {}, kernel has {dim}", s.len()));
            }
            out.push(Site::from_coords(s).map_err(|e| ConfigError::Field { field: "operation.seed".into(), message: e.to_string() })?);
        }
        Seed::new(dim, out).map_err(|e| ConfigError::Field { field: "operation.seed".into(), message: e.to_string() })
    }

    /// Checks every documented precondition without simulating anything.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.id.trim().is_empty() {
            return field("id", "must be nonempty");
        }
        if self.samples == Some(0) {
            return field("samples", "must be >= 1");
        }
        if let Operation::OpDemo { p, rows, .. } = &self.operation {
            if !(0.0..=1.0).contains(p) {
                return field("operation.p", format!("must lie in [0,1], got {p}"));
            }
            if *rows == 0 {
                return field("operation.rows", "must be >= 1");
            }
            return Ok(());
        }
        let kernel = self.kernel()?;
        kernel.sampler().map_err(|e| ConfigError::Field { field: "kernel".into(), message: e.to_string() })?;
        let dim = kernel.dim();
        let seed = self.seed(dim)?;
        let check_escape = |escape: &Option<u64>| match escape {
            Some(r) if *r < seed.radius() => field("operation.escape_radius", "must be at least the seed radius"),
            _ => Ok(()),
        };
        let check_restrict = |restrict: &Option<Restriction>, horizon: f64| {
            if let Some(b) = restrict {
                nonneg("operation.restrict.half_width", b.half_width)?;
                if let Some(h) = b.height {
                    nonneg("operation.restrict.height", h)?;
                    if h > horizon {
                        return field("operation.restrict.height", "must not exceed the horizon");
                    }
                }
                if seed.radius() as f64 > b.half_width {
                    return field("operation.seed", "seed lies outside the restriction box");
                }
            }
            Ok(())
        };
        match &self.operation {
            Operation::Simulate { delta, horizon, restrict, escape_radius, .. }
            | Operation::Survival { delta, horizon, restrict, escape_radius, .. }
            | Operation::Susceptibility { delta, horizon, restrict, escape_radius, .. } => {
                nonneg("operation.delta", *delta)?;
                positive("operation.horizon", *horizon)?;
                check_restrict(restrict, *horizon)?;
                check_escape(escape_radius)?;
            }
            Operation::DeltaC { horizon, threshold, max_iter, rel_tolerance, escape_radius } => {
                positive("operation.horizon", *horizon)?;
                open_unit("operation.threshold", *threshold)?;
                if *max_iter == 0 {
                    return field("operation.max_iter", "must be >= 1");
                }
                positive("operation.rel_tolerance", *rel_tolerance)?;
                check_escape(escape_radius)?;
            }
            Operation::UpperDensity { delta, l, t } => {
                nonneg("operation.delta", *delta)?;
                nonneg("operation.l", *l)?;
                nonneg("operation.t", *t)?;
            }
            Operation::Arrows { delta, l, t, shell_width, .. } => {
                nonneg("operation.delta", *delta)?;
                nonneg("operation.l", *l)?;
                nonneg("operation.t", *t)?;
                if !(*shell_width > 0.0) {
                    return field("operation.shell_width", format!("must be > 0, got {shell_width}"));
                }
                if seed.radius() as f64 > *l {
                    return field("operation.seed", "seed lies outside the box B_L");
                }
            }
            Operation::ExtinctionTail { delta, horizon, escape_radius, bound, .. } => {
                nonneg("operation.delta", *delta)?;
                positive("operation.horizon", *horizon)?;
                check_escape(escape_radius)?;
                if let Some(b) = bound {
                    if b.ks.is_empty() {
                        return field("operation.bound.ks", "must be nonempty");
                    }
                    for k in &b.ks {
                        nonneg("operation.bound.ks", *k)?;
                    }
                    nonneg("operation.bound.l", b.l)?;
                    nonneg("operation.bound.t", b.t)?;
                    if b.t > *horizon {
                        return field("operation.bound.t", "must not exceed the horizon");
                    }
                    if seed.radius() as f64 > b.l {
                        return field("operation.seed", "seed lies outside the box B_L");
                    }
                }
            }
            Operation::Growth { delta, horizon, thetas, target, .. } => {
                nonneg("operation.delta", *delta)?;
                positive("operation.horizon", *horizon)?;
                if thetas.is_empty() {
                    return field("operation.thetas", "must be nonempty");
                }
                for th in thetas {
                    nonneg("operation.thetas", *th)?;
                }
                if !(*target > 0.0 && *target <= 1.0) {
                    return field("operation.target", format!("must lie in (0,1], got {target}"));
                }
            }
            Operation::FstcCheck { delta, l, t, r, theta, epsilon, conditions, shell_width, restriction_width, .. } => {
                nonneg("operation.delta", *delta)?;
                nonneg("operation.l", *l)?;
                nonneg("operation.t", *t)?;
                if !(*r > 1.0 && r.is_finite()) {
                    return field("operation.r", format!("must exceed 1, got {r}"));
                }
                if !theta.is_finite() {
                    return field("operation.theta", "must be finite");
                }
                open_unit("operation.epsilon", *epsilon)?;
                if conditions.is_empty() {
                    return field("operation.conditions", "must be nonempty");
                }
                if let Some(w) = shell_width {
                    positive("operation.shell_width", *w)?;
                }
                if let Some(w) = restriction_width {
                    nonneg("operation.restriction_width", *w)?;
                }
            }
            Operation::FstcSearch { delta, epsilons, r, l_ladder, t_factors, budget, chunk, revalidate } => {
                nonneg("operation.delta", *delta)?;
                if epsilons.is_empty() {
                    return field("operation.epsilons", "must be nonempty");
                }
                for e in epsilons {
                    open_unit("operation.epsilons", *e)?;
                }
                if !(*r > 1.0 && r.is_finite()) {
                    return field("operation.r", format!("must exceed 1, got {r}"));
                }
                if let Some(ls) = l_ladder {
                    if ls.is_empty() {
                        return field("operation.l_ladder", "must be nonempty");
                    }
                    for l in ls {
                        positive("operation.l_ladder", *l)?;
                    }
                }
                if let Some(fs) = t_factors {
                    if fs.is_empty() {
                        return field("operation.t_factors", "must be nonempty");
                    }
                    for f in fs {
                        positive("operation.t_factors", *f)?;
                    }
                }
                if *budget == Some(0) {
                    return field("operation.budget", "must be >= 1");
                }
                if *chunk == Some(0) {
                    return field("operation.chunk", "must be >= 1");
                }
                if *revalidate == Some(0) {
                    return field("operation.revalidate", "must be >= 1");
                }
            }
            Operation::Sweep { horizon, delta, deltas, truncations, escape_radius, .. } => {
                positive("operation.horizon", *horizon)?;
                check_escape(escape_radius)?;
                match (deltas, truncations) {
                    (Some(_), Some(_)) | (None, None) => {
                        return field("operation", "exactly one of `deltas` and `truncations` must be given");
                    }
                    (Some(ds), None) => {
                        if ds.is_empty() {
                            return field("operation.deltas", "grid must be nonempty");
                        }
                        for d in ds {
                            nonneg("operation.deltas", *d)?;
                        }
                    }
                    (None, Some(ks)) => {
                        if ks.is_empty() {
                            return field("operation.truncations", "grid must be nonempty");
                        }
                        if ks.contains(&0) {
                            return field("operation.truncations", "truncation levels must be >= 1");
                        }
                        let Some(d) = delta else {
                            return field("operation.delta", "a truncation sweep needs a fixed delta");
                        };
                        nonneg("operation.delta", *d)?;
                    }
                }
            }
            Operation::OpDemo { .. } => unreachable!("handled above"),
        }
        Ok(())
    }
}
