//! Multi-horizon quantile and point predictors.
//!
//! Every model holds one independent regressor per horizon step (direct
//! multi-step strategy). Quantile models minimize the pinball loss at a fixed
//! level τ; point models minimize squared error.

mod linear;
mod pinball;
mod tree;

pub use linear::{LinearParams, LinearRegressor};
pub use pinball::{pinball_loss, pinball_loss_horizon, pinball_subgradient};
pub use tree::{Node, Tree, TreeEnsemble, TreeParams};

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetView, FeatureLayout, FeatureVector};
use crate::error::{Error, Result};
use pinball::check_tau;
use tree::BinnedMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum Objective {
    Quantile { tau: f64 },
    SquaredError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    BoostedTrees,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneParams {
    BoostedTrees(TreeParams),
    Linear(LinearParams),
}

impl Default for BackboneParams {
    fn default() -> Self {
        BackboneParams::BoostedTrees(TreeParams::default())
    }
}

impl BackboneParams {
    pub fn kind(&self) -> BackboneKind {
        match self {
            BackboneParams::BoostedTrees(_) => BackboneKind::BoostedTrees,
            BackboneParams::Linear(_) => BackboneKind::Linear,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            BackboneParams::BoostedTrees(p) => p.seed,
            BackboneParams::Linear(p) => p.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            BackboneParams::BoostedTrees(p) => p.seed = seed,
            BackboneParams::Linear(p) => p.seed = seed,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        match self {
            BackboneParams::BoostedTrees(p) => {
                if p.n_trees == 0 || p.max_depth == 0 || p.min_samples_leaf == 0 {
                    return bad("n_trees, max_depth and min_samples_leaf must be at least 1");
                }
                if !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
                    return bad("learning_rate must be in (0, 1]");
                }
                if !(p.subsample > 0.0 && p.subsample <= 1.0) {
                    return bad("subsample must be in (0, 1]");
                }
                if !(2..=256).contains(&p.max_bins) {
                    return bad("max_bins must be in [2, 256]");
                }
            }
            BackboneParams::Linear(p) => {
                if p.steps == 0 {
                    return bad("steps must be at least 1");
                }
                if !(p.step_size > 0.0 && p.step_size.is_finite()) {
                    return bad("step_size must be positive");
                }
                if p.batch_size == Some(0) {
                    return bad("batch_size must be at least 1");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    BoostedTrees(TreeEnsemble),
    Linear(LinearRegressor),
}

impl Regressor {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Regressor::BoostedTrees(e) => e.predict(x),
            Regressor::Linear(l) => l.predict(x),
        }
    }
}

/// A fitted multi-horizon predictor: a quantile model `f^(τ)` or, with a
/// squared-error objective, a point model of the same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileModel {
    objective: Objective,
    params: BackboneParams,
    layout: Arc<FeatureLayout>,
    horizon_models: Vec<Regressor>,
}

const MODEL_FORMAT: &str = "safecast-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    backbone_kind: BackboneKind,
    #[serde(flatten)]
    model: QuantileModel,
}

pub fn train_quantile_model(
    train: &DatasetView<'_>,
    tau: f64,
    params: &BackboneParams,
) -> Result<QuantileModel> {
    check_tau(tau)?;
    train_model(train, Objective::Quantile { tau }, params)
}

pub fn train_point_model(
    train: &DatasetView<'_>,
    params: &BackboneParams,
) -> Result<QuantileModel> {
    train_model(train, Objective::SquaredError, params)
}

pub fn train_model(
    train: &DatasetView<'_>,
    objective: Objective,
    params: &BackboneParams,
) -> Result<QuantileModel> {
    if let Objective::Quantile { tau } = objective {
        check_tau(tau)?;
    }
    params.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let n = train.len();
    let width = train.n_features();
    let features = train.features();
    let horizon = train.horizon();

    let horizon_models: Vec<Regressor> = match params {
        BackboneParams::BoostedTrees(p) => {
            let binned = BinnedMatrix::new(features, n, width, p.max_bins);
            (0..horizon)
                .into_par_iter()
                .map(|h| {
                    let y = train.target_column(h);
                    Regressor::BoostedTrees(tree::fit_ensemble(&binned, &y, objective, p, h as u64))
                })
                .collect()
        }
        BackboneParams::Linear(p) => (0..horizon)
            .into_par_iter()
            .map(|h| {
                let y = train.target_column(h);
                Regressor::Linear(linear::fit_linear(
                    features, n, width, &y, objective, p, h as u64,
                ))
            })
            .collect(),
    };

    Ok(QuantileModel {
        objective,
        params: *params,
        layout: Arc::clone(train.layout()),
        horizon_models,
    })
}

impl QuantileModel {
    /// Assemble a model from already-fitted per-step regressors.
    pub fn from_parts(
        objective: Objective,
        params: BackboneParams,
        layout: Arc<FeatureLayout>,
        horizon_models: Vec<Regressor>,
    ) -> Result<QuantileModel> {
        let model = QuantileModel {
            objective,
            params,
            layout,
            horizon_models,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        if let Objective::Quantile { tau } = self.objective {
            check_tau(tau)?;
        }
        if self.horizon_models.is_empty() {
            return Err(Error::ModelFormat("model has no horizon regressors".into()));
        }
        let width = self.layout.len();
        for r in &self.horizon_models {
            let ok = match (r, self.params.kind()) {
                (Regressor::BoostedTrees(e), BackboneKind::BoostedTrees) => e
                    .trees
                    .iter()
                    .all(|t| t.is_well_formed() && t.max_feature().is_none_or(|f| f < width)),
                (Regressor::Linear(l), BackboneKind::Linear) => {
                    l.weights.len() == width && l.means.len() == width && l.scales.len() == width
                }
                _ => false,
            };
            if !ok {
                return Err(Error::ModelFormat(
                    "regressor payload inconsistent with backbone kind or layout".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn tau(&self) -> Option<f64> {
        match self.objective {
            Objective::Quantile { tau } => Some(tau),
            Objective::SquaredError => None,
        }
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn backbone_kind(&self) -> BackboneKind {
        self.params.kind()
    }

    pub fn params(&self) -> &BackboneParams {
        &self.params
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn horizon(&self) -> usize {
        self.horizon_models.len()
    }

    fn check_layout(&self, other: &FeatureLayout) -> Result<()> {
        if other.fingerprint() != self.layout.fingerprint() {
            return Err(Error::LayoutMismatch {
                expected: self.layout.fingerprint().to_string(),
                actual: other.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    /// Raw regressor output, without the non-negativity clamp.
    pub fn predict_raw(&self, x: &[f64]) -> Vec<f64> {
        self.horizon_models.iter().map(|r| r.predict(x)).collect()
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check_layout(&x.layout)?;
        Ok(self.predict_clamped(&x.values))
    }

    fn predict_clamped(&self, x: &[f64]) -> Vec<f64> {
        self.horizon_models
            .iter()
            .map(|r| r.predict(x).max(0.0))
            .collect()
    }

    /// Clamped predictions for every row of a view, row-major `len × H`.
    pub fn predict_view(&self, view: &DatasetView<'_>) -> Result<Vec<f64>> {
        self.check_layout(view.layout())?;
        if view.horizon() != self.horizon() {
            return Err(Error::LengthMismatch {
                expected: self.horizon(),
                actual: view.horizon(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..view.len())
            .into_par_iter()
            .map(|i| self.predict_clamped(view.x(i)))
            .collect();
        Ok(rows.concat())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            backbone_kind: self.params.kind(),
            model: self.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<QuantileModel> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        if file.backbone_kind != file.model.params.kind() {
            return Err(Error::ModelFormat(
                "backbone_kind disagrees with params".into(),
            ));
        }
        file.model.check()?;
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<QuantileModel> {
        QuantileModel::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, Split, SplitRatios, Trace};
    use std::collections::BTreeMap;

    fn small_trees() -> BackboneParams {
        BackboneParams::BoostedTrees(TreeParams {
            n_trees: 20,
            max_depth: 3,
            min_samples_leaf: 5,
            ..TreeParams::default()
        })
    }

    fn constant_dataset(c: f64) -> crate::data::WindowedDataset {
        let trace = Trace::new("c", (0..300).collect(), vec![c; 300], BTreeMap::new()).unwrap();
        make_windows(&trace, 6, 3, SplitRatios::default()).unwrap()
    }

    #[test]
    fn stump_model_prediction() {
        let layout = Arc::new(FeatureLayout::from_names(vec!["a".into(), "b".into()]));
        let ens = TreeEnsemble {
            base: 0.0,
            trees: vec![Tree::stump(0, 5.0, 2.0, 8.0)],
        };
        let model = QuantileModel::from_parts(
            Objective::Quantile { tau: 0.3 },
            small_trees(),
            Arc::clone(&layout),
            vec![
                Regressor::BoostedTrees(ens.clone()),
                Regressor::BoostedTrees(ens),
            ],
        )
        .unwrap();
        let x = FeatureVector {
            values: vec![3.0, 100.0],
            layout,
        };
        assert_eq!(model.predict(&x).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn negative_raw_output_is_clamped() {
        let layout = Arc::new(FeatureLayout::from_names(vec!["a".into()]));
        let ens = TreeEnsemble {
            base: -3.0,
            trees: vec![],
        };
        let model = QuantileModel::from_parts(
            Objective::SquaredError,
            small_trees(),
            Arc::clone(&layout),
            vec![Regressor::BoostedTrees(ens)],
        )
        .unwrap();
        assert_eq!(model.predict_raw(&[1.0]), vec![-3.0]);
        let x = FeatureVector {
            values: vec![1.0],
            layout,
        };
        assert_eq!(model.predict(&x).unwrap(), vec![0.0]);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let ds = constant_dataset(40.0);
        let model = train_quantile_model(&ds.view(Split::Train), 0.25, &small_trees()).unwrap();
        let foreign = FeatureVector {
            values: ds.feature_vector(0).values,
            layout: Arc::new(FeatureLayout::from_names(vec!["other".into()])),
        };
        assert!(matches!(
            model.predict(&foreign),
            Err(Error::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn constant_target_fits_exactly() {
        let ds = constant_dataset(40.0);
        let linear = BackboneParams::Linear(LinearParams {
            steps: 50,
            ..LinearParams::default()
        });
        for params in [small_trees(), linear] {
            for tau in [0.1, 0.35, 0.9] {
                let m = train_quantile_model(&ds.view(Split::Train), tau, &params).unwrap();
                for i in 0..ds.len() {
                    for p in m.predict(&ds.feature_vector(i)).unwrap() {
                        assert!((p - 40.0).abs() < 1e-6, "{params:?} tau={tau} p={p}");
                    }
                }
            }
            let m = train_point_model(&ds.view(Split::Train), &params).unwrap();
            assert_eq!(m.predict(&ds.feature_vector(0)).unwrap().len(), 3);
            assert!(m
                .predict(&ds.feature_vector(0))
                .unwrap()
                .iter()
                .all(|p| (p - 40.0).abs() < 1e-6));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = constant_dataset(1.0);
        let train = ds.view(Split::Train);
        assert_eq!(
            train_quantile_model(&train, 1.0, &small_trees()).unwrap_err(),
            Error::InvalidTau(1.0)
        );
        let trimmed = ds.without_test();
        assert_eq!(
            train_quantile_model(&trimmed.view(Split::Test), 0.5, &small_trees()).unwrap_err(),
            Error::EmptyTrainingSet
        );
        let bad = BackboneParams::BoostedTrees(TreeParams {
            subsample: 0.0,
            ..TreeParams::default()
        });
        assert!(matches!(
            train_quantile_model(&train, 0.5, &bad),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn serialization_rejects_foreign_files() {
        assert!(matches!(
            QuantileModel::from_json(r#"{"format":"x","version":1}"#),
            Err(Error::ModelFormat(_))
        ));
    }
}
