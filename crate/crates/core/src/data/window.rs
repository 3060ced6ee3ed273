use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::time::{derive_time_features, TIME_FEATURE_NAMES};
use super::{AuxKey, Trace};
use crate::error::{Error, Result};

/// Ordered feature names of a flattened history window, plus a fingerprint
/// used to reject vectors built with a different layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    names: Vec<String>,
    fingerprint: String,
}

impl FeatureLayout {
    pub fn from_names(names: Vec<String>) -> FeatureLayout {
        let mut hasher = Sha256::new();
        for n in &names {
            hasher.update(n.as_bytes());
            hasher.update([0u8]);
        }
        let fingerprint = hex::encode(&hasher.finalize()[..8]);
        FeatureLayout { names, fingerprint }
    }

    /// Layout for a history of `history` slots with the given aux keys:
    /// throughput lags, then each aux series, then each time feature.
    pub fn for_window(history: usize, aux: &[AuxKey]) -> FeatureLayout {
        let mut groups: Vec<&str> = vec!["throughput"];
        groups.extend(aux.iter().map(|k| k.column()));
        groups.extend(TIME_FEATURE_NAMES);
        let names = groups
            .iter()
            .flat_map(|g| (0..history).rev().map(move |lag| format!("{g}@-{lag}")))
            .collect();
        FeatureLayout::from_names(names)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Serialize for FeatureLayout {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureLayout {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Vec::<String>::deserialize(d).map(FeatureLayout::from_names)
    }
}

/// One flattened input window tied to its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Arc<FeatureLayout>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Calibration,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calibration => "calibration",
            Split::Test => "test",
        }
    }
}

/// Chronological train/calibration/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            calibration: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.calibration, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::InvalidSplitRatios(format!(
                "all ratios must be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplitRatios(format!(
                "ratios sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Sample counts for `n` samples; boundaries are rounded cumulative fractions.
    pub fn boundaries(&self, n: usize) -> [usize; 2] {
        let b0 = ((n as f64) * self.train).round() as usize;
        let b1 = ((n as f64) * (self.train + self.calibration)).round() as usize;
        [b0.min(n), b1.min(n).max(b0.min(n))]
    }
}

/// Supervised windows cut from one trace, with contiguous chronological splits.
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    layout: Arc<FeatureLayout>,
    history: usize,
    horizon: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
    origins: Vec<usize>,
    bounds: [usize; 2],
}

pub fn make_windows(
    trace: &Trace,
    history: usize,
    horizon: usize,
    ratios: SplitRatios,
) -> Result<WindowedDataset> {
    if history == 0 || horizon == 0 {
        return Err(Error::InvalidConfig(format!(
            "history ({history}) and horizon ({horizon}) must be at least 1"
        )));
    }
    ratios.validate()?;
    let needed = history + horizon;
    if trace.len() < needed {
        return Err(Error::TraceTooShort {
            len: trace.len(),
            needed,
        });
    }

    let aux_keys: Vec<AuxKey> = trace.aux().keys().copied().collect();
    let layout = Arc::new(FeatureLayout::for_window(history, &aux_keys));
    let width = layout.len();
    let time = derive_time_features(trace.timestamps());
    let time_cols: Vec<Vec<f64>> = (0..TIME_FEATURE_NAMES.len())
        .map(|j| time.iter().map(|f| f.as_array()[j]).collect())
        .collect();

    let mut series: Vec<&[f64]> = vec![trace.throughput()];
    series.extend(trace.aux().values().map(|v| v.as_slice()));
    series.extend(time_cols.iter().map(|v| v.as_slice()));

    let origins: Vec<usize> = (history - 1..trace.len() - horizon).collect();
    let n = origins.len();
    let mut features = Vec::with_capacity(n * width);
    let mut targets = Vec::with_capacity(n * horizon);
    for &t in &origins {
        let start = t + 1 - history;
        for s in &series {
            features.extend_from_slice(&s[start..=t]);
        }
        targets.extend_from_slice(&trace.throughput()[t + 1..=t + horizon]);
    }
    debug_assert_eq!(features.len(), n * width);

    Ok(WindowedDataset {
        layout,
        history,
        horizon,
        features,
        targets,
        origins,
        bounds: ratios.boundaries(n),
    })
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn layout(&self) -> &Arc<FeatureLayout> {
        &self.layout
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        let [b0, b1] = self.bounds;
        match split {
            Split::Train => 0..b0,
            Split::Calibration => b0..b1,
            Split::Test => b1..self.len(),
        }
    }

    pub fn split_of(&self, index: usize) -> Split {
        let [b0, b1] = self.bounds;
        if index < b0 {
            Split::Train
        } else if index < b1 {
            Split::Calibration
        } else {
            Split::Test
        }
    }

    pub fn view(&self, split: Split) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            range: self.split_range(split),
        }
    }

    pub fn all(&self) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            range: 0..self.len(),
        }
    }

    pub fn feature_vector(&self, index: usize) -> FeatureVector {
        FeatureVector {
            values: self.row(index).to_vec(),
            layout: Arc::clone(&self.layout),
        }
    }

    fn row(&self, index: usize) -> &[f64] {
        let w = self.layout.len();
        &self.features[index * w..(index + 1) * w]
    }

    fn target(&self, index: usize) -> &[f64] {
        &self.targets[index * self.horizon..(index + 1) * self.horizon]
    }

    /// Copy of the dataset with the test partition removed. Calibration
    /// code that receives this copy provably never sees test targets.
    pub fn without_test(&self) -> WindowedDataset {
        let keep = self.bounds[1];
        let w = self.layout.len();
        WindowedDataset {
            layout: Arc::clone(&self.layout),
            history: self.history,
            horizon: self.horizon,
            features: self.features[..keep * w].to_vec(),
            targets: self.targets[..keep * self.horizon].to_vec(),
            origins: self.origins[..keep].to_vec(),
            bounds: self.bounds,
        }
    }
}

/// A contiguous slice of a dataset, usually one split.
#[derive(Clone, Debug)]
pub struct DatasetView<'a> {
    dataset: &'a WindowedDataset,
    range: Range<usize>,
}

impl<'a> DatasetView<'a> {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.dataset.horizon
    }

    pub fn n_features(&self) -> usize {
        self.dataset.layout.len()
    }

    pub fn layout(&self) -> &'a Arc<FeatureLayout> {
        &self.dataset.layout
    }

    pub fn x(&self, i: usize) -> &'a [f64] {
        self.dataset.row(self.range.start + i)
    }

    pub fn y(&self, i: usize) -> &'a [f64] {
        self.dataset.target(self.range.start + i)
    }

    pub fn origin(&self, i: usize) -> usize {
        self.dataset.origins[self.range.start + i]
    }

    /// Row-major `len × n_features` feature block.
    pub fn features(&self) -> &'a [f64] {
        let w = self.dataset.layout.len();
        &self.dataset.features[self.range.start * w..self.range.end * w]
    }

    /// Row-major `len × horizon` target block.
    pub fn targets(&self) -> &'a [f64] {
        let h = self.dataset.horizon;
        &self.dataset.targets[self.range.start * h..self.range.end * h]
    }

    /// Targets for one horizon step across all rows.
    pub fn target_column(&self, step: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.y(i)[step]).collect()
    }

    pub fn mean_target(&self) -> f64 {
        let t = self.targets();
        if t.is_empty() {
            0.0
        } else {
            t.iter().sum::<f64>() / t.len() as f64
        }
    }
}
