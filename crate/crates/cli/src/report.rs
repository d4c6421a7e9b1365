//! Summary tables over result records.
//!
//! CSV columns, in order: `experiment, operation, status, label, parameter,
//! value, ci_low, ci_high, n_samples, n_escaped, slope, r_squared, grid_lo,
//! grid_hi, flags`. Empty cells mean "not applicable". Floats are written
//! with full round-trip precision.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::record::{ResultRecord, Status, VERSION};

pub const CSV_COLUMNS: [&str; 15] = [
    "experiment",
    "operation",
    "status",
    "label",
    "parameter",
    "value",
    "ci_low",
    "ci_high",
    "n_samples",
    "n_escaped",
    "slope",
    "r_squared",
    "grid_lo",
    "grid_hi",
    "flags",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub operation: String,
    pub status: Status,
    pub label: String,
    pub parameter: Option<f64>,
    pub value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_samples: Option<u64>,
    pub n_escaped: Option<u64>,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub flags: String,
}

pub struct Report {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

/// Flattens records into table rows, grouped by experiment in order of first
/// appearance.
pub fn build_report(records: &[ResultRecord]) -> Report {
    let mut warnings = Vec::new();
    let mut versions: Vec<&str> = records.iter().map(|r| r.version.as_str()).collect();
    versions.sort_unstable();
    versions.dedup();
    if versions.len() > 1 || versions.first().is_some_and(|v| *v != VERSION) {
        warnings.push(format!("records come from versions {versions:?} (this is {VERSION}); merging anyway"));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.experiment.as_str()) {
            order.push(&r.experiment);
        }
    }
    let mut rows = Vec::new();
    for id in order {
        for r in records.iter().filter(|r| r.experiment == id) {
            for row in &r.rows {
                rows.push(ReportRow {
                    experiment: r.experiment.clone(),
                    operation: r.operation.clone(),
                    status: r.status,
                    label: row.label.clone(),
                    parameter: row.parameter,
                    value: row.value,
                    ci_low: row.ci_low,
                    ci_high: row.ci_high,
                    n_samples: row.n_samples,
                    n_escaped: row.n_escaped,
                    slope: row.slope,
                    r_squared: row.r_squared,
                    grid_lo: row.grid_lo,
                    grid_hi: row.grid_hi,
                    flags: row.flags.clone(),
                });
            }
        }
    }
    Report { rows, warnings }
}

pub fn write_csv<W: Write>(rows: &[ReportRow], w: W) -> io::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()
}

pub fn read_csv<R: io::Read>(r: R) -> io::Result<Vec<ReportRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(io::Error::other)).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// Fixed-width text table for terminals.
pub fn write_text<W: Write>(rows: &[ReportRow], mut w: W) -> io::Result<()> {
    let header = ["experiment", "label", "param", "value", "ci", "n", "slope", "R2", "flags"];
    let body: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            let status = if r.status == Status::Inconclusive { " (inconclusive)" } else { "" };
            [
                format!("{}{status}", r.experiment),
                r.label.clone(),
                cell(r.parameter),
                cell(r.value),
                match (r.ci_low, r.ci_high) {
                    (Some(a), Some(b)) => format!("[{a:.4}, {b:.4}]"),
                    (Some(a), None) => format!(">= {a:.4}"),
                    _ => "-".into(),
                },
                r.n_samples.map_or_else(|| "-".into(), |n| n.to_string()),
                cell(r.slope),
                cell(r.r_squared),
                r.flags.clone(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (wd, c) in widths.iter_mut().zip(row) {
            *wd = (*wd).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells.iter().zip(widths).map(|(c, wd)| format!("{c:<wd$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    writeln!(w, "{}", line(header.to_vec()))?;
    for row in &body {
        writeln!(w, "{}", line(row.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}
