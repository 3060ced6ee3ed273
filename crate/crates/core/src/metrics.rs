//! Accuracy and overestimation-safety metrics over `(prediction, truth)`
//! element pairs, pooled across samples and horizon steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N × H` predictions and truths, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBatch {
    horizon: usize,
    preds: Vec<f64>,
    truths: Vec<f64>,
}

impl PredictionBatch {
    pub fn new(preds: Vec<f64>, truths: Vec<f64>, horizon: usize) -> Result<PredictionBatch> {
        if preds.is_empty() && truths.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if preds.len() != truths.len() {
            return Err(Error::InvalidBatch(format!(
                "{} predictions vs {} truths",
                preds.len(),
                truths.len()
            )));
        }
        if horizon == 0 || !preds.len().is_multiple_of(horizon) {
            return Err(Error::InvalidBatch(format!(
                "{} elements do not form rows of horizon {horizon}",
                preds.len()
            )));
        }
        if preds.iter().chain(&truths).any(|v| !v.is_finite()) {
            return Err(Error::InvalidBatch("non-finite entry".into()));
        }
        if truths.iter().any(|&t| t < 0.0) {
            return Err(Error::InvalidBatch("negative truth".into()));
        }
        Ok(PredictionBatch {
            horizon,
            preds,
            truths,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_samples(&self) -> usize {
        self.preds.len() / self.horizon
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn preds(&self) -> &[f64] {
        &self.preds
    }

    pub fn truths(&self) -> &[f64] {
        &self.truths
    }

    /// The same truths with every prediction multiplied by `c`.
    pub fn scaled(&self, c: f64) -> PredictionBatch {
        PredictionBatch {
            horizon: self.horizon,
            preds: self.preds.iter().map(|p| p * c).collect(),
            truths: self.truths.clone(),
        }
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.preds.iter().copied().zip(self.truths.iter().copied())
    }
}

/// Empirical percentile (`p` in `[0, 100]`) with linear interpolation
/// between the two closest ranks. Reorders `values`.
pub fn percentile(values: &mut [f64], p: f64) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, lo_val, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    if frac == 0.0 || upper.is_empty() {
        return Some(lo_val);
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    Some(lo_val + (hi_val - lo_val) * frac)
}

pub fn mae(batch: &PredictionBatch) -> Result<f64> {
    mean_of(batch.pairs().map(|(p, t)| (p - t).abs()), batch.len())
}

pub fn rmse(batch: &PredictionBatch) -> Result<f64> {
    mean_of(batch.pairs().map(|(p, t)| (p - t) * (p - t)), batch.len()).map(f64::sqrt)
}

/// Fraction of elements with a strictly positive error.
pub fn over_rate(batch: &PredictionBatch) -> Result<f64> {
    mean_of(
        batch.pairs().map(|(p, t)| if p > t { 1.0 } else { 0.0 }),
        batch.len(),
    )
}

/// Mean positive error: average of `max(ŷ − y, 0)`.
pub fn mpe(batch: &PredictionBatch) -> Result<f64> {
    mean_of(batch.pairs().map(|(p, t)| (p - t).max(0.0)), batch.len())
}

/// 95th percentile of `max(ŷ − y, 0)`, zeros included.
pub fn p95_pos_err(batch: &PredictionBatch) -> Result<f64> {
    let mut pos: Vec<f64> = batch.pairs().map(|(p, t)| (p - t).max(0.0)).collect();
    percentile(&mut pos, 95.0).ok_or(Error::EmptyBatch)
}

fn mean_of(values: impl Iterator<Item = f64>, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(values.sum::<f64>() / n as f64)
}

/// Low-throughput evaluation subsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    P30,
    P10,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::All, Subset::P30, Subset::P10];

    pub fn percent(self) -> Option<f64> {
        match self {
            Subset::All => None,
            Subset::P30 => Some(30.0),
            Subset::P10 => Some(10.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::P30 => "p30",
            Subset::P10 => "p10",
        }
    }
}

/// Elements whose truth is at or below the `percent`-th percentile of all
/// truths in the batch.
pub fn subset_mask(batch: &PredictionBatch, percent: f64) -> Result<Vec<bool>> {
    let mut truths = batch.truths.clone();
    let threshold = percentile(&mut truths, percent).ok_or(Error::EmptyBatch)?;
    Ok(batch.truths.iter().map(|&t| t <= threshold).collect())
}

pub(crate) fn mask_for(batch: &PredictionBatch, subset: Subset) -> Result<Vec<bool>> {
    match subset.percent() {
        None => Ok(vec![true; batch.len()]),
        Some(p) => subset_mask(batch, p),
    }
}

/// The five headline metrics over one set of elements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mae: f64,
    pub rmse: f64,
    pub over_rate: f64,
    pub mpe: f64,
    pub p95_pos_err: f64,
    pub n_elements: usize,
}

impl MetricSet {
    pub const NAMES: [&'static str; 5] = ["mae", "rmse", "over_rate", "mpe", "p95_pos_err"];

    fn over_pairs(pairs: &[(f64, f64)]) -> Option<MetricSet> {
        let n = pairs.len();
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let (mut abs, mut sq, mut over, mut pos_sum) = (0.0, 0.0, 0usize, 0.0);
        let mut pos = Vec::with_capacity(n);
        for &(p, t) in pairs {
            let e = p - t;
            abs += e.abs();
            sq += e * e;
            if e > 0.0 {
                over += 1;
            }
            let pe = e.max(0.0);
            pos_sum += pe;
            pos.push(pe);
        }
        Some(MetricSet {
            mae: abs / nf,
            rmse: (sq / nf).sqrt(),
            over_rate: over as f64 / nf,
            mpe: pos_sum / nf,
            p95_pos_err: percentile(&mut pos, 95.0)?,
            n_elements: n,
        })
    }

    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("mae", self.mae),
            ("rmse", self.rmse),
            ("over_rate", self.over_rate),
            ("mpe", self.mpe),
            ("p95_pos_err", self.p95_pos_err),
        ]
    }
}

/// Metrics for one predictor on one split, optionally broken down by the
/// low-throughput subsets. A subset with no elements is absent from the map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub overall: MetricSet,
    pub subsets: BTreeMap<Subset, MetricSet>,
}

impl SafetyReport {
    pub fn mae(&self) -> f64 {
        self.overall.mae
    }
    pub fn rmse(&self) -> f64 {
        self.overall.rmse
    }
    pub fn over_rate(&self) -> f64 {
        self.overall.over_rate
    }
    pub fn mpe(&self) -> f64 {
        self.overall.mpe
    }
    pub fn p95_pos_err(&self) -> f64 {
        self.overall.p95_pos_err
    }
}

pub fn safety_report(batch: &PredictionBatch, with_subsets: bool) -> Result<SafetyReport> {
    let pairs: Vec<(f64, f64)> = batch.pairs().collect();
    let overall = MetricSet::over_pairs(&pairs).ok_or(Error::EmptyBatch)?;
    let mut subsets = BTreeMap::new();
    if with_subsets {
        for subset in Subset::ALL {
            let mask = mask_for(batch, subset)?;
            let selected: Vec<(f64, f64)> = pairs
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(pt, _)| *pt)
                .collect();
            if let Some(m) = MetricSet::over_pairs(&selected) {
                subsets.insert(subset, m);
            }
        }
    }
    Ok(SafetyReport { overall, subsets })
}
