//! Throughput traces, feature windows and synthetic trace generation.

mod csv_io;
mod synthetic;
mod time;
mod window;

pub use csv_io::{ingest_csv, ingest_reader, write_csv, CsvSchema};
pub use synthetic::{generate_synthetic, NoiseModel, ScaleDriver, SyntheticSpec, SyntheticTrace};
pub use time::{derive_time_features, TimeFeatures, TIME_FEATURE_NAMES};
pub use window::{
    make_windows, DatasetView, FeatureLayout, FeatureVector, Split, SplitRatios, WindowedDataset,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Auxiliary per-timestep covariates a trace may carry.
///
/// Declaration order is the canonical feature order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKey {
    ElevationDeg,
    AzimuthDeg,
    SatDistanceKm,
    SatIdCode,
    NumCandidates,
    CloudPct,
    PressureHpa,
    HumidityPct,
}

impl AuxKey {
    pub const ALL: [AuxKey; 8] = [
        AuxKey::ElevationDeg,
        AuxKey::AzimuthDeg,
        AuxKey::SatDistanceKm,
        AuxKey::SatIdCode,
        AuxKey::NumCandidates,
        AuxKey::CloudPct,
        AuxKey::PressureHpa,
        AuxKey::HumidityPct,
    ];

    /// Column name used in the CSV trace format.
    pub fn column(self) -> &'static str {
        match self {
            AuxKey::ElevationDeg => "elevation_deg",
            AuxKey::AzimuthDeg => "azimuth_deg",
            AuxKey::SatDistanceKm => "sat_distance_km",
            AuxKey::SatIdCode => "sat_id_code",
            AuxKey::NumCandidates => "num_candidates",
            AuxKey::CloudPct => "cloud_pct",
            AuxKey::PressureHpa => "pressure_hpa",
            AuxKey::HumidityPct => "humidity_pct",
        }
    }

    pub fn from_column(name: &str) -> Option<AuxKey> {
        AuxKey::ALL.into_iter().find(|k| k.column() == name)
    }
}

/// A timestamped throughput series for one location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    name: String,
    timestamps: Vec<i64>,
    throughput: Vec<f64>,
    aux: BTreeMap<AuxKey, Vec<f64>>,
}

impl Trace {
    pub fn new(
        name: impl Into<String>,
        timestamps: Vec<i64>,
        throughput: Vec<f64>,
        aux: BTreeMap<AuxKey, Vec<f64>>,
    ) -> Result<Trace> {
        if timestamps.len() != throughput.len() {
            return Err(Error::LengthMismatch {
                expected: throughput.len(),
                actual: timestamps.len(),
            });
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotoneTimestamps(w[1]));
        }
        for (row, &v) in throughput.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidTrace(format!(
                    "non-finite throughput at index {row}"
                )));
            }
            if v < 0.0 {
                return Err(Error::NegativeThroughput { row, value: v });
            }
        }
        for (key, series) in &aux {
            if series.len() != throughput.len() {
                return Err(Error::InvalidTrace(format!(
                    "aux series `{}` has length {}, expected {}",
                    key.column(),
                    series.len(),
                    throughput.len()
                )));
            }
            if let Some(i) = series.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidTrace(format!(
                    "non-finite `{}` value at index {i}",
                    key.column()
                )));
            }
        }
        Ok(Trace {
            name: name.into(),
            timestamps,
            throughput,
            aux,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn throughput(&self) -> &[f64] {
        &self.throughput
    }

    pub fn aux(&self) -> &BTreeMap<AuxKey, Vec<f64>> {
        &self.aux
    }

    pub fn len(&self) -> usize {
        self.throughput.len()
    }

    pub fn is_empty(&self) -> bool {
        self.throughput.is_empty()
    }

    pub fn mean_throughput(&self) -> f64 {
        if self.throughput.is_empty() {
            return 0.0;
        }
        self.throughput.iter().sum::<f64>() / self.throughput.len() as f64
    }
}
