use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::backbone::{train_quantile_model, BackboneParams, QuantileModel};
use crate::data::DatasetView;
use crate::error::Result;
use crate::metrics::{mae, over_rate, PredictionBatch};

/// Calibration accuracy `A(τ)` (MAE) and risk `R(τ)` (OverRate) of one
/// candidate quantile level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub tau: f64,
    pub mae: f64,
    pub over_rate: f64,
}

/// An evaluated candidate together with whatever produced it (a fitted model
/// for real data, nothing for synthetic risk curves).
#[derive(Debug)]
pub struct Candidate<A> {
    pub evaluation: Evaluation,
    pub artifact: A,
}

pub type CandidateEvaluation = Candidate<QuantileModel>;

/// Produces candidates for a quantile level. Implementations are expected to
/// be deterministic in `tau`.
pub trait CandidateSource: Sync {
    type Artifact: Send + Sync;

    fn build(&self, tau: f64) -> Result<Candidate<Self::Artifact>>;
}

/// Trains `f^(τ)` on the training view and scores it on the calibration view.
pub struct QuantileFamily<'a> {
    pub train: DatasetView<'a>,
    pub cal: DatasetView<'a>,
    pub params: BackboneParams,
}

impl CandidateSource for QuantileFamily<'_> {
    type Artifact = QuantileModel;

    fn build(&self, tau: f64) -> Result<CandidateEvaluation> {
        evaluate_candidate(tau, &self.train, &self.cal, &self.params)
    }
}

/// Train at `tau` and compute `A(τ)` and `R(τ)` on the calibration view.
pub fn evaluate_candidate(
    tau: f64,
    train: &DatasetView<'_>,
    cal: &DatasetView<'_>,
    params: &BackboneParams,
) -> Result<CandidateEvaluation> {
    let model = train_quantile_model(train, tau, params)?;
    let preds = model.predict_view(cal)?;
    let batch = PredictionBatch::new(preds, cal.targets().to_vec(), cal.horizon())?;
    Ok(Candidate {
        evaluation: Evaluation {
            tau,
            mae: mae(&batch)?,
            over_rate: over_rate(&batch)?,
        },
        artifact: model,
    })
}

type Slot<A> = Arc<OnceLock<Result<Arc<Candidate<A>>>>>;

/// Memoizing front for a [`CandidateSource`]: each τ is built at most once,
/// even under concurrent requests. The source fixes data, backbone params
/// and seed, so τ alone keys the cache.
pub struct Evaluator<S: CandidateSource> {
    source: S,
    cache: Mutex<BTreeMap<i64, Slot<S::Artifact>>>,
    builds: AtomicUsize,
}

fn tau_key(tau: f64) -> i64 {
    (tau * 1e12).round() as i64
}

impl<S: CandidateSource> Evaluator<S> {
    pub fn new(source: S) -> Self {
        Evaluator {
            source,
            cache: Mutex::new(BTreeMap::new()),
            builds: AtomicUsize::new(0),
        }
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn candidate(&self, tau: f64) -> Result<Arc<Candidate<S::Artifact>>> {
        let slot = {
            let mut cache = self.cache.lock().expect("evaluation cache poisoned");
            Arc::clone(cache.entry(tau_key(tau)).or_default())
        };
        slot.get_or_init(|| {
            self.builds.fetch_add(1, Ordering::SeqCst);
            self.source.build(tau).map(Arc::new)
        })
        .clone()
    }

    pub fn evaluate(&self, tau: f64) -> Result<Evaluation> {
        self.candidate(tau).map(|c| c.evaluation)
    }

    /// Number of times the underlying source was invoked (cache misses).
    pub fn trainings(&self) -> usize {
        self.builds.load(Ordering::SeqCst)
    }

    /// Every successfully evaluated candidate, ordered by τ.
    pub fn evaluations(&self) -> Vec<Evaluation> {
        let cache = self.cache.lock().expect("evaluation cache poisoned");
        cache
            .values()
            .filter_map(|slot| {
                slot.get()
                    .and_then(|r| r.as_ref().ok())
                    .map(|c| c.evaluation)
            })
            .collect()
    }
}
