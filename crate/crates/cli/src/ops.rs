//! Dispatch from a validated config to the estimators.

use std::fs::File;
use std::io::{self, BufWriter};
use std::time::Instant;

use lrcp_core::engine::{run, SimConfig};
use lrcp_core::estimators::{
    check_extinction_bound, estimate_delta_c, estimate_survival, estimate_susceptibility, estimate_upper_density,
    expected_arrows, extinction_tail, find_growth_speed, infected_region, max_separated, replicates, sample_shell_arrows,
    DeltaCProtocol, Estimate, EstimatorError, ExtinctionBoundSetup, Flag, Provenance,
};
use lrcp_core::fstc::{
    check_c1, check_c2, check_c3, check_c4, oriented_percolation_demo, revalidate, samples_for_epsilon, search_block_params,
    BlockSpec, SearchConfig, SearchOutcome,
};
use lrcp_core::geometry::{Face, GeometryError, Seed, Shell, SpaceTimeBox};
use lrcp_core::kernel::{Kernel, KernelError};
use lrcp_core::rng::StreamBase;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{Condition, ConfigError, ExperimentConfig, Operation, Restriction, ShellFace, SweepTarget};
use crate::record::{default_units, ReplicateRange, ResultRecord, Row, Status, VERSION};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl From<KernelError> for RunError {
    fn from(e: KernelError) -> Self {
        RunError::Estimator(e.into())
    }
}

impl From<GeometryError> for RunError {
    fn from(e: GeometryError) -> Self {
        RunError::Estimator(e.into())
    }
}

/// Record contents before the header fields are attached.
struct Part {
    status: Status,
    range: ReplicateRange,
    result: Value,
    rows: Vec<Row>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

fn range(stream: StreamBase, count: u64) -> ReplicateRange {
    ReplicateRange { master: stream.master, experiment: stream.experiment, first: 0, count }
}

fn flag_text(flags: &[Flag]) -> String {
    flags.iter().map(|f| to_value(f).as_str().unwrap_or_default().to_string()).collect::<Vec<_>>().join(";")
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn estimate_row(label: impl Into<String>, parameter: Option<f64>, e: &Estimate) -> Row {
    Row {
        label: label.into(),
        parameter,
        value: finite(e.value),
        ci_low: finite(e.ci_low),
        ci_high: finite(e.ci_high),
        n_samples: Some(e.n_samples),
        n_escaped: Some(e.n_escaped),
        flags: flag_text(&e.flags),
        ..Row::default()
    }
}

const INCONCLUSIVE_FLAGS: [Flag; 4] = [Flag::EscapeRateExceeded, Flag::DivergenceSuspected, Flag::Inconclusive, Flag::IterationLimit];

fn estimate_status(e: &Estimate) -> Status {
    if INCONCLUSIVE_FLAGS.iter().any(|f| e.has_flag(*f)) {
        Status::Inconclusive
    } else {
        Status::Ok
    }
}

fn sim_config(
    kernel: &Kernel,
    delta: f64,
    horizon: f64,
    restrict: &Option<Restriction>,
    escape_radius: Option<u64>,
    stream: StreamBase,
) -> Result<SimConfig, RunError> {
    let mut cfg = SimConfig::new(kernel.clone(), delta, horizon).with_stream(stream);
    if let Some(b) = restrict {
        cfg = cfg.with_domain(SpaceTimeBox::cube(kernel.dim(), b.half_width, b.height.unwrap_or(horizon))?);
    }
    cfg.escape_radius = escape_radius;
    Ok(cfg)
}

/// Validates the config and runs its operation.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let parts = dispatch(cfg)?;
    let wall = start.elapsed().as_secs_f64();
    Ok(parts
        .into_iter()
        .map(|p| ResultRecord {
            experiment: cfg.id.clone(),
            operation: cfg.operation.name().to_string(),
            replicates: p.range,
            config: cfg.clone(),
            status: p.status,
            result: p.result,
            rows: p.rows,
            wall_clock_s: wall,
            version: VERSION.to_string(),
            units: default_units(),
        })
        .collect())
}

fn dispatch(cfg: &ExperimentConfig) -> Result<Vec<Part>, RunError> {
    let stream = cfg.stream();
    let n = cfg.sample_count();
    if let Operation::OpDemo { p, rows, width } = &cfg.operation {
        let e = oriented_percolation_demo(*p, *rows, *width, n, stream)?;
        return Ok(vec![Part {
            status: Status::Ok,
            range: range(stream, n),
            rows: vec![estimate_row("op-survival", Some(*p), &e)],
            result: json!({ "p": p, "rows": rows, "width": width, "survival": e }),
        }]);
    }
    let kernel = cfg.kernel()?;
    let seed = cfg.seed(kernel.dim())?;
    match &cfg.operation {
        Operation::Simulate { delta, horizon, restrict, escape_radius, trajectory, .. } => {
            let sim = sim_config(&kernel, *delta, *horizon, restrict, *escape_radius, stream)?;
            let runs = replicates(n, |i| run(&sim.clone().with_replicate(i), &seed));
            let mut parts = Vec::with_capacity(n as usize);
            for (i, tr) in runs.into_iter().enumerate() {
                let tr = tr.map_err(EstimatorError::from)?;
                if i == 0 {
                    if let Some(path) = trajectory {
                        tr.write_lines(BufWriter::new(File::create(path)?))?;
                    }
                }
                let s = tr.summary();
                parts.push(Part {
                    status: Status::Ok,
                    range: ReplicateRange { first: i as u64, count: 1, ..range(stream, 1) },
                    rows: vec![Row {
                        label: "final-size".into(),
                        parameter: Some(i as f64),
                        value: Some(s.final_size as f64),
                        ..Row::default()
                    }],
                    result: json!({ "replicate": i, "summary": s }),
                });
            }
            Ok(parts)
        }
        Operation::Survival { delta, horizon, restrict, escape_radius, .. } => {
            let sim = sim_config(&kernel, *delta, *horizon, restrict, *escape_radius, stream)?;
            let e = estimate_survival(&sim, &seed, n)?;
            Ok(vec![Part {
                status: estimate_status(&e),
                range: range(stream, n),
                rows: vec![estimate_row("survival", Some(*delta), &e)],
                result: json!({ "delta": delta, "horizon": horizon, "survival": e }),
            }])
        }
        Operation::Susceptibility { delta, horizon, restrict, escape_radius, .. } => {
            let sim = sim_config(&kernel, *delta, *horizon, restrict, *escape_radius, stream)?;
            let e = estimate_susceptibility(&sim, &seed, n)?;
            Ok(vec![Part {
                status: estimate_status(&e),
                range: range(stream, n),
                rows: vec![estimate_row("susceptibility", Some(*delta), &e)],
                result: json!({ "delta": delta, "horizon": horizon, "susceptibility": e }),
            }])
        }
        Operation::DeltaC { horizon, threshold, max_iter, rel_tolerance, escape_radius } => {
            let protocol = DeltaCProtocol {
                horizon: *horizon,
                samples: n,
                threshold: *threshold,
                max_iter: *max_iter,
                rel_tolerance: *rel_tolerance,
                escape_radius: *escape_radius,
                stream,
            };
            let b = estimate_delta_c(&kernel, &protocol)?;
            let mut rows: Vec<Row> = b.probes.iter().map(|p| estimate_row("probe", Some(p.delta), &p.estimate)).collect();
            rows.push(Row {
                label: "delta-c".into(),
                value: finite(0.5 * (b.lo + b.hi)),
                ci_low: Some(b.lo),
                ci_high: Some(b.hi),
                flags: flag_text(&b.flags),
                ..Row::default()
            });
            let narrowed = b.lo > 0.0 || b.hi < b.total_rate;
            Ok(vec![Part {
                status: if narrowed { Status::Ok } else { Status::Inconclusive },
                range: range(stream, n),
                rows,
                result: to_value(&b),
            }])
        }
        Operation::UpperDensity { delta, l, t } => {
            let e = estimate_upper_density(&kernel, *delta, *l, *t, n, stream)?;
            Ok(vec![Part {
                status: Status::Ok,
                range: range(stream, n),
                rows: vec![estimate_row("upper-density", Some(*delta), &e)],
                result: json!({ "delta": delta, "l": l, "t": t, "density": e }),
            }])
        }
        Operation::Arrows { delta, l, t, shell_width, face, separation, .. } => arrows(
            &kernel,
            &seed,
            *delta,
            *l,
            *t,
            *shell_width,
            *face,
            separation.unwrap_or(seed.radius()),
            n,
            stream,
        ),
        Operation::ExtinctionTail { delta, horizon, escape_radius, bound, .. } => {
            let sim = sim_config(&kernel, *delta, *horizon, &None, *escape_radius, stream)?;
            let fit = extinction_tail(&sim, &seed, n)?;
            let status = if fit.flags.contains(&Flag::Inconclusive) || fit.flags.contains(&Flag::EscapeRateExceeded) {
                Status::Inconclusive
            } else {
                Status::Ok
            };
            let mut parts = vec![Part {
                status,
                range: range(stream, n),
                rows: vec![Row {
                    label: "tail-slope".into(),
                    parameter: Some(*delta),
                    value: finite(fit.slope),
                    ci_low: finite(fit.slope_ci.0),
                    ci_high: finite(fit.slope_ci.1),
                    n_samples: Some(fit.n_samples),
                    n_escaped: Some(fit.n_escaped),
                    slope: finite(fit.slope),
                    r_squared: finite(fit.r_squared),
                    grid_lo: finite(fit.grid.0),
                    grid_hi: finite(fit.grid.1),
                    flags: flag_text(&fit.flags),
                }],
                result: to_value(&fit),
            }];
            if let Some(b) = bound {
                for (j, &k) in b.ks.iter().enumerate() {
                    let s = stream.child(1 + j as u64);
                    let setup = ExtinctionBoundSetup {
                        delta: *delta,
                        l: b.l,
                        t: b.t,
                        k,
                        samples: n,
                        horizon: *horizon,
                        escape_radius: *escape_radius,
                        stream: s,
                    };
                    let rep = check_extinction_bound(&kernel, &seed, &setup)?;
                    let status = if rep.flags.contains(&Flag::Inconclusive) { Status::Inconclusive } else { Status::Ok };
                    parts.push(Part {
                        status,
                        range: range(s, n),
                        rows: vec![Row {
                            label: "extinction-given-h".into(),
                            parameter: Some(k),
                            value: finite(rep.frequency),
                            ci_low: finite(rep.bound),
                            n_samples: Some(rep.h_count),
                            n_escaped: Some(rep.n_escaped),
                            flags: flag_text(&rep.flags),
                            ..Row::default()
                        }],
                        result: to_value(&rep),
                    });
                }
            }
            Ok(parts)
        }
        Operation::Growth { delta, horizon, thetas, target, .. } => {
            let g = find_growth_speed(&kernel, *delta, &seed, thetas, *horizon, n, *target, stream)?;
            Ok(vec![Part {
                status: if g.theta.is_some() { Status::Ok } else { Status::Inconclusive },
                range: range(stream, n),
                rows: g.ladder.iter().map(|(th, e)| estimate_row("envelope", Some(*th), e)).collect(),
                result: to_value(&g),
            }])
        }
        Operation::FstcCheck { delta, l, t, r, theta, epsilon, conditions, shell_width, restriction_width, .. } => {
            let mut spec = BlockSpec::new(&seed, *l, *t, *r, *epsilon).with_theta(*theta);
            spec.shell_width = *shell_width;
            spec.restriction_width = *restriction_width;
            let n = if n == 0 { samples_for_epsilon(*epsilon) } else { n };
            let mut rows = Vec::new();
            let mut checks = Vec::new();
            for (j, c) in conditions.iter().enumerate() {
                let s = stream.child(j as u64);
                let mut found = Vec::new();
                match c {
                    Condition::C1 => found.push(("C1".to_string(), check_c1(&kernel, *delta, &spec, n, s)?)),
                    Condition::C3 => found.push(("C3".to_string(), check_c3(&kernel, *delta, &spec, n, s)?)),
                    Condition::C2 => {
                        for axis in 0..kernel.dim() {
                            for (m, positive) in [true, false].into_iter().enumerate() {
                                let sub = s.child(2 * axis as u64 + m as u64);
                                let sign = if positive { '+' } else { '-' };
                                found.push((format!("C2[{axis}{sign}]"), check_c2(&kernel, *delta, &spec, axis, positive, n, sub)?));
                            }
                        }
                    }
                    Condition::C4 => {
                        for (m, positive) in [true, false].into_iter().enumerate() {
                            let sign = if positive { '+' } else { '-' };
                            found.push((format!("C4[{sign}]"), check_c4(&kernel, *delta, &spec, positive, n, s.child(m as u64))?));
                        }
                    }
                }
                for (label, check) in found {
                    rows.push(estimate_row(label.clone(), Some(*delta), &check.estimate));
                    let pass = check.estimate.ci_low >= 1.0 - epsilon;
                    checks.push(json!({ "condition": label, "pass": pass, "estimate": check.estimate, "events": check.events }));
                }
            }
            Ok(vec![Part {
                status: Status::Ok,
                range: range(stream, n),
                rows,
                result: json!({ "spec": spec, "samples": n, "checks": checks }),
            }])
        }
        Operation::FstcSearch { delta, epsilons, r, l_ladder, t_factors, budget, chunk, revalidate: factor } => {
            let mut parts = Vec::new();
            for (j, &eps) in epsilons.iter().enumerate() {
                let s = stream.child(j as u64);
                let mut sc = SearchConfig::new(&kernel, eps, s);
                sc.r = *r;
                if let Some(ls) = l_ladder {
                    sc.l_ladder = ls.clone();
                }
                if let Some(fs) = t_factors {
                    sc.t_factors = fs.clone();
                }
                if let Some(b) = budget {
                    sc.budget = *b;
                }
                if let Some(c) = chunk {
                    sc.chunk = *c;
                }
                sc.samples = cfg.samples;
                let samples = sc.samples.unwrap_or_else(|| samples_for_epsilon(eps));
                let outcome = search_block_params(&kernel, *delta, &sc)?;
                let mut rows = Vec::new();
                let mut result = json!({ "epsilon": eps, "search": outcome });
                match &outcome {
                    SearchOutcome::Certified(cert) => {
                        rows.push(estimate_row("C1", Some(eps), &cert.c1));
                        for (axis, positive, e) in &cert.c2 {
                            let sign = if *positive { '+' } else { '-' };
                            rows.push(estimate_row(format!("C2[{axis}{sign}]"), Some(eps), e));
                        }
                        if let Some(m) = factor {
                            let (c1, faces) = revalidate(&kernel, *delta, &cert.spec, m * cert.samples, s.child(1 << 20))?;
                            rows.push(estimate_row("C1-revalidated", Some(eps), &c1.estimate));
                            let mut faces_json = Vec::new();
                            for (axis, positive, c) in &faces {
                                let sign = if *positive { '+' } else { '-' };
                                rows.push(estimate_row(format!("C2[{axis}{sign}]-revalidated"), Some(eps), &c.estimate));
                                faces_json.push(json!({ "axis": axis, "positive": positive, "estimate": c.estimate }));
                            }
                            result["revalidation"] = json!({ "samples": m * cert.samples, "c1": c1.estimate, "c2": faces_json });
                        }
                    }
                    SearchOutcome::Failed { best_c1, best_c2, .. } => {
                        rows.push(Row { label: "best-C1".into(), parameter: Some(eps), value: finite(*best_c1), ..Row::default() });
                        rows.push(Row { label: "best-C2".into(), parameter: Some(eps), value: finite(*best_c2), ..Row::default() });
                    }
                }
                let certified = outcome.certificate().is_some();
                parts.push(Part {
                    status: if certified { Status::Ok } else { Status::Inconclusive },
                    range: range(s, samples),
                    rows,
                    result,
                });
                if !certified {
                    break;
                }
            }
            Ok(parts)
        }
        Operation::Sweep { target, horizon, delta, deltas, truncations, escape_radius, .. } => {
            sweep(&kernel, &seed, *target, *horizon, *delta, deltas.as_deref(), truncations.as_deref(), *escape_radius, n, stream)
        }
        Operation::OpDemo { .. } => unreachable!("handled above"),
    }
}

#[allow(clippy::too_many_arguments)]
fn arrows(
    kernel: &Kernel,
    seed: &Seed,
    delta: f64,
    l: f64,
    t: f64,
    width: f64,
    face: ShellFace,
    separation: u64,
    n: u64,
    stream: StreamBase,
) -> Result<Vec<Part>, RunError> {
    let dim = kernel.dim();
    let domain = SpaceTimeBox::cube(dim, l, t)?;
    let face = match face {
        ShellFace::All => Face::All,
        ShellFace::Positive => Face::Axis { axis: 0, positive: true },
        ShellFace::Negative => Face::Axis { axis: 0, positive: false },
    };
    let shell = Shell::new(domain.clone(), &vec![width; dim], face)?;
    let sim = SimConfig::new(kernel.clone(), delta, t).with_domain(domain.clone()).with_stream(stream.child(0));
    let rows = replicates(n, |i| {
        let tr = run(&sim.clone().with_replicate(i), seed)?;
        let region = infected_region(&tr, &domain);
        let e = expected_arrows(&region, kernel, &shell)?;
        let arrows = sample_shell_arrows(&region, kernel, &shell, &mut stream.child(1).rng(i))?;
        Ok::<_, EstimatorError>((e, arrows.len() as f64, max_separated(&arrows, separation) as f64))
    });
    let (mut es, mut counts, mut ms) = (Vec::new(), Vec::new(), Vec::new());
    for r in rows {
        let (e, c, m) = r?;
        es.push(e);
        counts.push(c);
        ms.push(m);
    }
    let prov = Provenance { master: stream.master, experiment: stream.experiment, first_replicate: 0 };
    let e = Estimate::mean(&es, stream.child(2), prov);
    let c = Estimate::mean(&counts, stream.child(3), prov);
    let m = Estimate::mean(&ms, stream.child(4), prov);
    Ok(vec![Part {
        status: Status::Ok,
        range: range(stream, n),
        rows: vec![
            estimate_row("expected-arrows", Some(width), &e),
            estimate_row("sampled-arrows", Some(width), &c),
            estimate_row("separated-arrows", Some(width), &m),
        ],
        result: json!({ "shell_width": width, "separation": separation, "expected": e, "sampled": c, "separated": m }),
    }])
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    kernel: &Kernel,
    seed: &Seed,
    target: SweepTarget,
    horizon: f64,
    delta: Option<f64>,
    deltas: Option<&[f64]>,
    truncations: Option<&[u64]>,
    escape_radius: Option<u64>,
    n: u64,
    stream: StreamBase,
) -> Result<Vec<Part>, RunError> {
    // (parameter, kernel, delta) per grid point
    let grid: Vec<(f64, Kernel, f64)> = match (deltas, truncations) {
        (Some(ds), _) => ds.iter().map(|&d| (d, kernel.clone(), d)).collect(),
        (None, Some(ks)) => {
            let d = delta.expect("validated");
            ks.iter().map(|&k| Ok((k as f64, kernel.truncate(k)?, d))).collect::<Result<_, KernelError>>()?
        }
        (None, None) => unreachable!("validated"),
    };
    let decreasing = deltas.is_some();
    let label = match target {
        SweepTarget::Survival => "survival",
        SweepTarget::Susceptibility => "susceptibility",
    };
    let mut parts = Vec::new();
    let mut points = Vec::new();
    for (i, (param, k, d)) in grid.iter().enumerate() {
        let s = stream.child(i as u64);
        let sim = sim_config(k, *d, horizon, &None, escape_radius, s)?;
        let e = match target {
            SweepTarget::Survival => estimate_survival(&sim, seed, n)?,
            SweepTarget::Susceptibility => estimate_susceptibility(&sim, seed, n)?,
        };
        parts.push(Part {
            status: estimate_status(&e),
            range: range(s, n),
            rows: vec![estimate_row(label, Some(*param), &e)],
            result: json!({ "parameter": param, "delta": d, "estimate": e }),
        });
        points.push((*param, e));
    }
    let violations = monotonicity_audit(&points, decreasing);
    parts.push(Part {
        status: Status::Ok,
        range: range(stream, n),
        rows: vec![Row {
            label: "audit".into(),
            value: Some(violations.len() as f64),
            flags: if violations.is_empty() { String::new() } else { "monotonicity-violated".into() },
            ..Row::default()
        }],
        result: json!({
            "expected": if decreasing { "nonincreasing" } else { "nondecreasing" },
            "violations": violations,
        }),
    });
    Ok(parts)
}

/// Pairs `(p, q)` with `p < q` whose intervals are disjoint in the wrong
/// direction.
pub fn monotonicity_audit(points: &[(f64, Estimate)], decreasing: bool) -> Vec<(f64, f64)> {
    let mut sorted: Vec<&(f64, Estimate)> = points.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    for (i, (p, a)) in sorted.iter().map(|x| (x.0, &x.1)).enumerate() {
        for (q, b) in sorted[i + 1..].iter().map(|x| (x.0, &x.1)) {
            let bad = if decreasing { b.ci_low > a.ci_high } else { b.ci_high < a.ci_low };
            if bad {
                out.push((p, q));
            }
        }
    }
    out
}

/// Whether any record asks for exit status 3.
pub fn any_inconclusive(records: &[ResultRecord]) -> bool {
    records.iter().any(|r| r.status == Status::Inconclusive)
}
