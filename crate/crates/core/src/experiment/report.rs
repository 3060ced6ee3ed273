use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::{ExperimentBundle, FrontierRow, Method};
use crate::admission::DropStats;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::metrics::{MetricSet, Subset};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

/// One cell of the long-format metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub split: Split,
    pub subset: Subset,
    pub metric: String,
    pub value: f64,
}

fn row(method: Method, split: Split, subset: Subset, metric: &str, value: f64) -> MetricRow {
    MetricRow {
        method,
        split,
        subset,
        metric: metric.to_string(),
        value,
    }
}

/// Flatten a bundle into the long table. Subsets without elements have no
/// rows, and undefined reductions are left out.
pub fn metric_rows(bundle: &ExperimentBundle) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for r in &bundle.reports {
        let mut safety: Vec<(Subset, &MetricSet)> =
            r.safety.subsets.iter().map(|(s, m)| (*s, m)).collect();
        if safety.is_empty() {
            safety.push((Subset::All, &r.safety.overall));
        }
        for (subset, set) in safety {
            for (name, value) in set.named() {
                rows.push(row(r.method, r.split, subset, name, value));
            }
            let drops: Option<&DropStats> = match subset {
                Subset::All => Some(&r.admission.overall),
                s => r.admission.subsets.get(&s),
            };
            for (name, value) in drops.iter().flat_map(|d| d.named()) {
                rows.push(row(r.method, r.split, subset, name, value));
            }
        }
    }

    let cal = Split::Calibration;
    rows.push(row(
        Method::Bgcfqs,
        cal,
        Subset::All,
        "tau_star",
        bundle.selection.tau_star,
    ));
    if let Some(scale) = &bundle.scale {
        rows.push(row(
            Method::BudgetScale,
            cal,
            Subset::All,
            "c_star",
            scale.c_star,
        ));
    }
    for red in &bundle.reductions {
        let named = [
            ("mean_dropped", red.reduction.mean_dropped),
            ("violation_rate", red.reduction.violation_rate),
            ("p95_dropped", red.reduction.p95_dropped),
        ];
        for (name, value) in named {
            if let Some(v) = value {
                let metric = format!("{name}_reduction_vs_{}", red.baseline.as_str());
                rows.push(row(Method::Bgcfqs, Split::Test, Subset::All, &metric, v));
            }
        }
    }
    rows
}

fn io_err(path: &Path, e: impl fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write_table<T: Serialize>(rows: &[T], path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
            for r in rows {
                w.serialize(r).map_err(|e| io_err(path, e))?;
            }
            w.flush().map_err(|e| io_err(path, e))
        }
        Format::Json => {
            let text = serde_json::to_string_pretty(rows).map_err(|e| io_err(path, e))?;
            fs::write(path, text + "\n").map_err(|e| io_err(path, e))
        }
    }
}

/// Read a table previously written by [`emit_report`].
pub fn read_table<T: for<'de> Deserialize<'de>>(path: &Path, format: Format) -> Result<Vec<T>> {
    match format {
        Format::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
            r.deserialize()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| io_err(path, e))
        }
        Format::Json => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str(&text).map_err(|e| io_err(path, e))
        }
    }
}

pub(crate) fn write_frontier(rows: &[FrontierRow], dir: &Path, format: Format) -> Result<PathBuf> {
    let path = dir.join(format!("frontier.{}", format.extension()));
    write_table(rows, &path, format)?;
    Ok(path)
}

/// Write `metrics.<ext>` and `frontier.<ext>` into `dir`.
pub fn emit_report(bundle: &ExperimentBundle, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let metrics = dir.join(format!("metrics.{}", format.extension()));
    write_table(&metric_rows(bundle), &metrics, format)?;
    let frontier = write_frontier(&bundle.frontier, dir, format)?;
    Ok(vec![metrics, frontier])
}
