use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lrcp_cli::record::{append_records, read_records};
use lrcp_cli::report::{build_report, write_csv, write_text};
use lrcp_cli::ops::any_inconclusive;
use lrcp_cli::{run_experiment, ConfigError, ExperimentConfig, ResultRecord, RunError, Status, EXIT_INCONCLUSIVE, EXIT_INVALID};
use lrcp_core::estimators::EstimatorError;

#[derive(Parser)]
#[command(name = "lrcp", version, about = "Long-range contact process experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file: JSONL records, or CSV for `report`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the number of replicates.
    #[arg(long, global = true)]
    samples: Option<u64>,
}

#[derive(Subcommand, Clone, PartialEq)]
enum Command {
    Simulate,
    Survival,
    DeltaC,
    Susceptibility,
    UpperDensity,
    Arrows,
    ExtinctionTail,
    Growth,
    FstcCheck,
    FstcSearch,
    OpDemo,
    Sweep,
    /// Summarises a JSONL record file as a text table and CSV.
    Report {
        records: PathBuf,
    },
    /// Parses and validates a config without running it.
    Validate,
}

impl Command {
    fn operation(&self) -> Option<&'static str> {
        Some(match self {
            Command::Simulate => "simulate",
            Command::Survival => "survival",
            Command::DeltaC => "delta-c",
            Command::Susceptibility => "susceptibility",
            Command::UpperDensity => "upper-density",
            Command::Arrows => "arrows",
            Command::ExtinctionTail => "extinction-tail",
            Command::Growth => "growth",
            Command::FstcCheck => "fstc-check",
            Command::FstcSearch => "fstc-search",
            Command::OpDemo => "op-demo",
            Command::Sweep => "sweep",
            Command::Report { .. } | Command::Validate => return None,
        })
    }
}

fn load(global: &Global) -> Result<ExperimentConfig, ConfigError> {
    let Some(path) = &global.config else {
        return Err(ConfigError::Field { field: "--config".into(), message: "a config file is required".into() });
    };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = global.seed {
        cfg.master_seed = s;
    }
    if let Some(n) = global.samples {
        cfg.samples = Some(n);
    }
    if let Some(out) = &global.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn summarize(records: &[ResultRecord]) {
    for r in records {
        for row in &r.rows {
            let mut line = format!("{} {}", r.experiment, row.label);
            if let Some(p) = row.parameter {
                line += &format!(" @ {p}");
            }
            if let Some(v) = row.value {
                line += &format!(": {v:.6}");
            }
            if let (Some(a), Some(b)) = (row.ci_low, row.ci_high) {
                line += &format!(" [{a:.6}, {b:.6}]");
            }
            if !row.flags.is_empty() {
                line += &format!(" ({})", row.flags);
            }
            if r.status == Status::Inconclusive {
                line += " inconclusive";
            }
            eprintln!("{line}");
        }
    }
}

fn invalid(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_INVALID)
}

fn report(records: &PathBuf, out: Option<&PathBuf>) -> Result<ExitCode> {
    let recs = read_records(records).with_context(|| format!("reading {}", records.display()))?;
    let rep = build_report(&recs);
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    write_text(&rep.rows, io::stdout().lock())?;
    if let Some(path) = out {
        write_csv(&rep.rows, BufWriter::new(File::create(path)?)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    if let Some(w) = cli.global.workers {
        if w == 0 {
            return Ok(invalid("--workers must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().context("starting worker pool")?;
    }
    if let Command::Report { records } = &cli.command {
        return report(records, cli.global.out.as_ref());
    }
    let cfg = match load(&cli.global) {
        Ok(c) => c,
        Err(e) => return Ok(invalid(e)),
    };
    if cli.command == Command::Validate {
        return Ok(match cfg.validate() {
            Ok(()) => {
                println!("{}: valid {} config", cfg.id, cfg.operation.name());
                ExitCode::SUCCESS
            }
            Err(e) => invalid(e),
        });
    }
    let wanted = cli.command.operation().expect("operation subcommand");
    if cfg.operation.name() != wanted {
        return Ok(invalid(format!("config operation `{}` does not match subcommand `{wanted}`", cfg.operation.name())));
    }
    let records = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(RunError::Config(e)) => return Ok(invalid(e)),
        Err(RunError::Estimator(e @ EstimatorError::InvalidArgument(_))) => return Ok(invalid(e)),
        Err(e) => bail!(e),
    };
    match &cfg.out {
        Some(path) => append_records(path, &records).with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut out = io::stdout().lock();
            for r in &records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
        }
    }
    summarize(&records);
    if any_inconclusive(&records) {
        return Ok(ExitCode::from(EXIT_INCONCLUSIVE));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
