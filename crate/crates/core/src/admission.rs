//! Slot-level admission control driven by a throughput forecast.
//!
//! Each `(sample, horizon)` element is one memoryless decision slot: as many
//! `b`-Mbps services are admitted as the forecast allows, and those beyond
//! what the true throughput supports are dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{mask_for, percentile, PredictionBatch, Subset};

pub const DEFAULT_SERVICE_MBPS: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissionOutcome {
    pub n_admit: u64,
    pub n_oracle: u64,
    pub n_served: u64,
    pub n_drop: u64,
}

fn check_bandwidth(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(b))
    }
}

pub fn admit(y_safe: f64, y_true: f64, b: f64) -> Result<AdmissionOutcome> {
    check_bandwidth(b)?;
    Ok(admit_unchecked(y_safe, y_true, b))
}

fn admit_unchecked(y_safe: f64, y_true: f64, b: f64) -> AdmissionOutcome {
    let n_admit = (y_safe.max(0.0) / b).floor() as u64;
    let n_oracle = (y_true.max(0.0) / b).floor() as u64;
    AdmissionOutcome {
        n_admit,
        n_oracle,
        n_served: n_admit.min(n_oracle),
        n_drop: n_admit.saturating_sub(n_oracle),
    }
}

/// Drop statistics over one set of slots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropStats {
    pub mean_dropped: f64,
    pub violation_rate: f64,
    pub p95_dropped: f64,
    pub n_slots: usize,
    pub total_admitted: u64,
    pub total_served: u64,
    pub total_dropped: u64,
    pub total_oracle: u64,
}

impl DropStats {
    pub const NAMES: [&'static str; 3] = ["mean_dropped", "violation_rate", "p95_dropped"];

    fn over(outcomes: &[AdmissionOutcome]) -> Option<DropStats> {
        if outcomes.is_empty() {
            return None;
        }
        let n = outcomes.len() as f64;
        let mut drops: Vec<f64> = outcomes.iter().map(|o| o.n_drop as f64).collect();
        let violations = outcomes.iter().filter(|o| o.n_drop > 0).count();
        Some(DropStats {
            mean_dropped: drops.iter().sum::<f64>() / n,
            violation_rate: violations as f64 / n,
            p95_dropped: percentile(&mut drops, 95.0)?,
            n_slots: outcomes.len(),
            total_admitted: outcomes.iter().map(|o| o.n_admit).sum(),
            total_served: outcomes.iter().map(|o| o.n_served).sum(),
            total_dropped: outcomes.iter().map(|o| o.n_drop).sum(),
            total_oracle: outcomes.iter().map(|o| o.n_oracle).sum(),
        })
    }

    pub fn named(&self) -> [(&'static str, f64); 3] {
        [
            ("mean_dropped", self.mean_dropped),
            ("violation_rate", self.violation_rate),
            ("p95_dropped", self.p95_dropped),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissionReport {
    pub service_mbps: f64,
    pub overall: DropStats,
    pub subsets: BTreeMap<Subset, DropStats>,
    /// Digest of the truth values; reports are comparable only when equal.
    pub slot_digest: String,
}

impl AdmissionReport {
    pub fn mean_dropped(&self) -> f64 {
        self.overall.mean_dropped
    }
    pub fn violation_rate(&self) -> f64 {
        self.overall.violation_rate
    }
    pub fn p95_dropped(&self) -> f64 {
        self.overall.p95_dropped
    }
}

fn slot_digest(batch: &PredictionBatch, b: f64) -> String {
    let mut h = Sha256::new();
    h.update((batch.horizon() as u64).to_le_bytes());
    h.update(b.to_le_bytes());
    for t in batch.truths() {
        h.update(t.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

pub fn simulate(batch: &PredictionBatch, b: f64, with_subsets: bool) -> Result<AdmissionReport> {
    check_bandwidth(b)?;
    let outcomes: Vec<AdmissionOutcome> = batch
        .preds()
        .iter()
        .zip(batch.truths())
        .map(|(&p, &t)| admit_unchecked(p, t, b))
        .collect();
    let overall = DropStats::over(&outcomes).ok_or(Error::EmptyBatch)?;
    let mut subsets = BTreeMap::new();
    if with_subsets {
        for subset in Subset::ALL {
            let mask = mask_for(batch, subset)?;
            let selected: Vec<AdmissionOutcome> = outcomes
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(o, _)| *o)
                .collect();
            if let Some(stats) = DropStats::over(&selected) {
                subsets.insert(subset, stats);
            }
        }
    }
    Ok(AdmissionReport {
        service_mbps: b,
        overall,
        subsets,
        slot_digest: slot_digest(batch, b),
    })
}

/// Relative reduction `(baseline − candidate) / baseline`; `None` when the
/// baseline value is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub mean_dropped: Option<f64>,
    pub violation_rate: Option<f64>,
    pub p95_dropped: Option<f64>,
}

pub fn compare(baseline: &AdmissionReport, candidate: &AdmissionReport) -> Result<Reduction> {
    if baseline.slot_digest != candidate.slot_digest
        || baseline.overall.n_slots != candidate.overall.n_slots
    {
        return Err(Error::SlotMismatch);
    }
    let rel = |base: f64, cand: f64| (base != 0.0).then(|| (base - cand) / base);
    Ok(Reduction {
        mean_dropped: rel(baseline.mean_dropped(), candidate.mean_dropped()),
        violation_rate: rel(baseline.violation_rate(), candidate.violation_rate()),
        p95_dropped: rel(baseline.p95_dropped(), candidate.p95_dropped()),
    })
}
