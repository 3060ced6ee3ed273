use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{Baseline, DatasetConfig, ExperimentConfig};
use super::report::{emit_report, Format};
use crate::admission::{compare, simulate, AdmissionReport, Reduction};
use crate::backbone::{train_point_model, QuantileModel};
use crate::calibration::{
    budget_scale_calibrate, run_selection, CandidateEvaluation, Evaluator, QuantileFamily,
    ScaleSelection, SelectionResult,
};
use crate::data::{
    generate_synthetic, ingest_csv, make_windows, DatasetView, Split, Trace, WindowedDataset,
};
use crate::error::{Error, Result, StageExt};
use crate::metrics::{safety_report, PredictionBatch, SafetyReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Point,
    BudgetScale,
    Bgcfqs,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Point => "point",
            Method::BudgetScale => "budget_scale",
            Method::Bgcfqs => "bgcfqs",
        }
    }
}

pub fn load_trace(config: &ExperimentConfig) -> Result<Trace> {
    match &config.dataset {
        DatasetConfig::Csv { path, schema } => ingest_csv(path, schema),
        DatasetConfig::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.seed = config.stage_seed("dataset");
            Ok(generate_synthetic(&spec)?.trace)
        }
    }
}

pub fn prepare_dataset(config: &ExperimentConfig) -> Result<WindowedDataset> {
    config.validate()?;
    let trace = load_trace(config).stage("ingest")?;
    make_windows(&trace, config.history, config.horizon, config.split_ratios).stage("windowing")
}

/// The two calibrated controls and the models behind them.
#[derive(Debug)]
pub struct Controls {
    pub selection: SelectionResult,
    pub quantile: Arc<CandidateEvaluation>,
    pub scale: Option<ScaleSelection>,
}

struct PointBaseline {
    model: QuantileModel,
    cal: PredictionBatch,
}

/// Calibration state over the train and calibration views only. Trained
/// quantile models are cached across budgets.
pub struct Calibrator<'a> {
    config: &'a ExperimentConfig,
    mean_train: f64,
    evaluator: Evaluator<QuantileFamily<'a>>,
    point: Option<PointBaseline>,
}

impl<'a> Calibrator<'a> {
    pub fn new(config: &'a ExperimentConfig, dataset: &'a WindowedDataset) -> Result<Self> {
        let train = dataset.view(Split::Train);
        let cal = dataset.view(Split::Calibration);
        if train.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if cal.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let point = if config.baselines.is_empty() {
            None
        } else {
            let params = config.backbone.with_seed(config.stage_seed("point_model"));
            let model = train_point_model(&train, &params)?;
            let preds = model.predict_view(&cal)?;
            let cal = PredictionBatch::new(preds, cal.targets().to_vec(), cal.horizon())?;
            Some(PointBaseline { model, cal })
        };
        Ok(Calibrator {
            config,
            mean_train: train.mean_target(),
            evaluator: Evaluator::new(QuantileFamily {
                train,
                cal,
                params: config
                    .backbone
                    .with_seed(config.stage_seed("quantile_models")),
            }),
            point,
        })
    }

    pub fn point_model(&self) -> Option<&QuantileModel> {
        self.point.as_ref().map(|p| &p.model)
    }

    /// Quantile-model trainings so far, across every budget.
    pub fn trainings(&self) -> usize {
        self.evaluator.trainings()
    }

    pub fn controls(&self, epsilon: f64) -> Result<Controls> {
        let risk = self
            .config
            .risk
            .with_epsilon(epsilon)
            .resolve_lambda(self.mean_train);
        let selection = run_selection(&risk, &self.evaluator)?;
        let quantile = self.evaluator.candidate(selection.tau_star)?;
        let scale =
            match &self.point {
                Some(p) if self.config.wants(Baseline::BudgetScale) => Some(
                    budget_scale_calibrate(&p.cal, epsilon, &self.config.c_grid)?,
                ),
                _ => None,
            };
        Ok(Controls {
            selection,
            quantile,
            scale,
        })
    }
}

/// Calibrate τ* and c* at the configured budget. Only the train and
/// calibration splits are read.
pub fn calibrate(config: &ExperimentConfig, dataset: &WindowedDataset) -> Result<Controls> {
    Calibrator::new(config, dataset)?.controls(config.risk.epsilon)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub split: Split,
    pub safety: SafetyReport,
    pub admission: AdmissionReport,
}

/// Admission reduction of BG-CFQS relative to one baseline on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub baseline: Method,
    pub reduction: Reduction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub method: Method,
    pub epsilon: f64,
    /// τ* for BG-CFQS, c* for budget-scale, empty for the raw point model.
    pub control: Option<f64>,
    pub feasible: Option<bool>,
    pub cal_over_rate: f64,
    pub cal_mae: f64,
    pub over_rate: f64,
    pub mae: f64,
    pub mpe: f64,
    pub p95_pos_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub created_unix: u64,
    pub config: ExperimentConfig,
}

impl Manifest {
    fn for_config(config: &ExperimentConfig) -> Manifest {
        Manifest {
            format: "safecast-run".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.config_hash(),
            seed: config.seed,
            stage_seeds: config.stage_seeds(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: config.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentBundle {
    pub manifest: Manifest,
    pub selection: SelectionResult,
    pub scale: Option<ScaleSelection>,
    pub reports: Vec<MethodReport>,
    pub reductions: Vec<ReductionRow>,
    pub frontier: Vec<FrontierRow>,
}

impl ExperimentBundle {
    pub fn report(&self, method: Method, split: Split) -> Option<&MethodReport> {
        self.reports
            .iter()
            .find(|r| r.method == method && r.split == split)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentBundle> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// A finished run: the bundle plus the fitted models it reports on.
#[derive(Debug)]
pub struct Experiment {
    pub bundle: ExperimentBundle,
    pub quantile_model: QuantileModel,
    pub point_model: Option<QuantileModel>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

impl Experiment {
    /// Write the manifest, selection report, bundle, models and tables into
    /// `dir`. Returns the written paths.
    pub fn write(&self, dir: impl AsRef<Path>, format: Format) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let mut written = Vec::new();
        let mut put = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
            let path = dir.join(name);
            f(&path)?;
            written.push(path);
            Ok(())
        };
        put("manifest.json", &|p| write_json(p, &self.bundle.manifest))?;
        put("selection.json", &|p| {
            write_json(
                p,
                &serde_json::json!({
                    "selection": &self.bundle.selection,
                    "scale": &self.bundle.scale,
                }),
            )
        })?;
        put("bundle.json", &|p| write_json(p, &self.bundle))?;
        put("model_bgcfqs.json", &|p| self.quantile_model.save(p))?;
        if let Some(point) = &self.point_model {
            put("model_point.json", &|p| point.save(p))?;
        }
        written.extend(emit_report(&self.bundle, dir, format)?);
        Ok(written)
    }
}

struct Predictions {
    method: Method,
    batch: PredictionBatch,
}

fn method_predictions(
    controls: &Controls,
    point: Option<&QuantileModel>,
    config: &ExperimentConfig,
    view: &DatasetView<'_>,
) -> Result<Vec<Predictions>> {
    let truths = view.targets().to_vec();
    let mut out = Vec::new();
    if let Some(point) = point {
        let raw = PredictionBatch::new(point.predict_view(view)?, truths.clone(), view.horizon())?;
        if let Some(scale) = &controls.scale {
            out.push(Predictions {
                method: Method::BudgetScale,
                batch: raw.scaled(scale.c_star),
            });
        }
        if config.wants(Baseline::Point) {
            out.push(Predictions {
                method: Method::Point,
                batch: raw,
            });
        }
    }
    let model = &controls.quantile.artifact;
    out.push(Predictions {
        method: Method::Bgcfqs,
        batch: PredictionBatch::new(model.predict_view(view)?, truths, view.horizon())?,
    });
    out.sort_by_key(|p| p.method);
    Ok(out)
}

fn frontier_rows(
    epsilon: f64,
    controls: &Controls,
    cal: &[Predictions],
    test: &[Predictions],
) -> Result<Vec<FrontierRow>> {
    cal.iter()
        .zip(test)
        .map(|(c, t)| {
            let cal_report = safety_report(&c.batch, false)?;
            let test_report = safety_report(&t.batch, false)?;
            let (control, feasible) = match c.method {
                Method::Point => (None, None),
                Method::BudgetScale => controls
                    .scale
                    .as_ref()
                    .map(|s| (Some(s.c_star), Some(s.feasible)))
                    .unwrap_or((None, None)),
                Method::Bgcfqs => (
                    Some(controls.selection.tau_star),
                    Some(controls.selection.feasible),
                ),
            };
            Ok(FrontierRow {
                method: c.method,
                epsilon,
                control,
                feasible,
                cal_over_rate: cal_report.over_rate(),
                cal_mae: cal_report.mae(),
                over_rate: test_report.over_rate(),
                mae: test_report.mae(),
                mpe: test_report.mpe(),
                p95_pos_err: test_report.p95_pos_err(),
            })
        })
        .collect()
}

/// Run the full protocol for one config. Nothing is written to disk; see
/// [`Experiment::write`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    let manifest = Manifest::for_config(config);
    let dataset = prepare_dataset(config)?;

    let calibrator = Calibrator::new(config, &dataset).stage("training")?;
    let controls = calibrator
        .controls(config.risk.epsilon)
        .stage("calibration")?;

    let point = calibrator.point_model();
    let cal_view = dataset.view(Split::Calibration);
    let cal_preds = method_predictions(&controls, point, config, &cal_view).stage("calibration")?;
    // The test batch is built only once both controls are fixed.
    let test_view = dataset.view(Split::Test);
    let test_preds =
        method_predictions(&controls, point, config, &test_view).stage("evaluation")?;

    let mut reports = Vec::new();
    for (split, preds) in [(Split::Calibration, &cal_preds), (Split::Test, &test_preds)] {
        for p in preds {
            reports.push(MethodReport {
                method: p.method,
                split,
                safety: safety_report(&p.batch, true).stage("evaluation")?,
                admission: simulate(&p.batch, config.admission_b, true).stage("admission")?,
            });
        }
    }

    let test_report = |m: Method| {
        reports
            .iter()
            .find(|r| r.method == m && r.split == Split::Test)
    };
    let candidate = test_report(Method::Bgcfqs).expect("BG-CFQS is always evaluated");
    let mut reductions = Vec::new();
    for baseline in [Method::Point, Method::BudgetScale] {
        if let Some(base) = test_report(baseline) {
            reductions.push(ReductionRow {
                baseline,
                reduction: compare(&base.admission, &candidate.admission).stage("admission")?,
            });
        }
    }

    let frontier = frontier_rows(config.risk.epsilon, &controls, &cal_preds, &test_preds)
        .stage("evaluation")?;

    Ok(Experiment {
        bundle: ExperimentBundle {
            manifest,
            selection: controls.selection.clone(),
            scale: controls.scale.clone(),
            reports,
            reductions,
            frontier,
        },
        quantile_model: controls.quantile.artifact.clone(),
        point_model: point.cloned(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub manifest: Manifest,
    pub rows: Vec<FrontierRow>,
    pub selections: Vec<SelectionResult>,
    pub scales: Vec<Option<ScaleSelection>>,
    /// Quantile-model trainings over the whole sweep.
    pub n_trainings: usize,
}

fn check_sweep(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() {
        return Err(Error::EmptySweep);
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::InvalidRiskConfig(format!(
            "budget {e} is outside (0, 1)"
        )));
    }
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "budgets must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Re-run calibration for every budget in `epsilons`, sharing one model
/// cache, and evaluate each method on the test split.
pub fn run_frontier(config: &ExperimentConfig, epsilons: &[f64]) -> Result<Frontier> {
    check_sweep(epsilons)?;
    let manifest = Manifest::for_config(config);
    let dataset = prepare_dataset(config)?;
    let calibrator = Calibrator::new(config, &dataset).stage("training")?;

    let mut all_controls = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        all_controls.push(calibrator.controls(eps).stage("calibration")?);
    }

    let point = calibrator.point_model();
    let cal_view = dataset.view(Split::Calibration);
    let test_view = dataset.view(Split::Test);
    let mut rows = Vec::new();
    for (&eps, controls) in epsilons.iter().zip(&all_controls) {
        let cal = method_predictions(controls, point, config, &cal_view).stage("calibration")?;
        let test = method_predictions(controls, point, config, &test_view).stage("evaluation")?;
        rows.extend(frontier_rows(eps, controls, &cal, &test).stage("evaluation")?);
    }

    Ok(Frontier {
        manifest,
        rows,
        n_trainings: calibrator.trainings(),
        selections: all_controls.iter().map(|c| c.selection.clone()).collect(),
        scales: all_controls.into_iter().map(|c| c.scale).collect(),
    })
}

impl Frontier {
    pub fn write(&self, dir: impl AsRef<Path>, format: Format) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let manifest = dir.join("manifest.json");
        write_json(&manifest, &self.manifest)?;
        let selections = dir.join("frontier_selections.json");
        write_json(
            &selections,
            &serde_json::json!({
                "selections": &self.selections,
                "scales": &self.scales,
                "n_trainings": self.n_trainings,
            }),
        )?;
        let table = super::report::write_frontier(&self.rows, dir, format)?;
        Ok(vec![manifest, selections, table])
    }
}
