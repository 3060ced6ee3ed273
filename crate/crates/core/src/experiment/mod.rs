//! End-to-end experiment pipelines: ingest, window, train, calibrate on the
//! calibration split, then evaluate and simulate admission on the test split.

mod config;
mod report;
mod run;

pub use config::{derive_seed, Baseline, DatasetConfig, ExperimentConfig, SEEDED_STAGES};
pub use report::{emit_report, metric_rows, read_table, Format, MetricRow};
pub use run::{
    calibrate, load_trace, prepare_dataset, run_experiment, run_frontier, Calibrator, Controls,
    Experiment, ExperimentBundle, Frontier, FrontierRow, Manifest, Method, MethodReport,
    ReductionRow,
};

/// Default ε sweep 0.30, 0.35, …, 0.50.
pub fn default_epsilons() -> Vec<f64> {
    (6..=10).map(|k| k as f64 * 5.0 / 100.0).collect()
}
