//! Seeded synthetic throughput traces with a known noise distribution.
//!
//! Throughput is `base + diurnal sinusoid − handover dips + scale · noise`,
//! clamped at zero. Because the noise law is known, the true conditional
//! τ-quantile of every slot is available for oracle checks.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalLaw};

use super::{AuxKey, Trace};
use crate::error::{Error, Result};

/// Zero-centred additive noise with a closed-form quantile function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    Uniform { half_width: f64 },
    Gaussian { sigma: f64 },
    Laplace { scale: f64 },
}

impl NoiseModel {
    fn param(&self) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Uniform { half_width } => half_width,
            NoiseModel::Gaussian { sigma } => sigma,
            NoiseModel::Laplace { scale } => scale,
        }
    }

    /// Inverse CDF at `p ∈ (0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Uniform { half_width } => half_width * (2.0 * p - 1.0),
            NoiseModel::Gaussian { sigma } => {
                if sigma == 0.0 {
                    0.0
                } else {
                    NormalLaw::new(0.0, sigma)
                        .expect("sigma validated positive")
                        .inverse_cdf(p)
                }
            }
            NoiseModel::Laplace { scale } => {
                if p < 0.5 {
                    scale * (2.0 * p).ln()
                } else {
                    -scale * (2.0 * (1.0 - p)).ln()
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Uniform { half_width } => {
                if half_width == 0.0 {
                    0.0
                } else {
                    rng.random_range(-half_width..half_width)
                }
            }
            NoiseModel::Gaussian { sigma } => Normal::new(0.0, sigma)
                .expect("sigma validated non-negative")
                .sample(rng),
            NoiseModel::Laplace { scale } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            }
        }
    }
}

/// Makes noise heteroscedastic: a piecewise-constant `cloud_pct` covariate
/// in `[0, 100]` is emitted as an aux series, and the noise is multiplied by
/// `low + (high − low) · cloud_pct / 100`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleDriver {
    pub segment_len: usize,
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub length: usize,
    pub seed: u64,
    pub start_timestamp: i64,
    pub step_seconds: i64,
    pub base_level: f64,
    pub diurnal_amplitude: f64,
    pub diurnal_period_s: f64,
    pub handover_period: i64,
    pub handover_width: i64,
    pub handover_drop: f64,
    pub noise_model: NoiseModel,
    pub scale_driver: Option<ScaleDriver>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            length: 10_000,
            seed: 0,
            // 2024-04-26T00:00:00Z
            start_timestamp: 1_714_089_600,
            step_seconds: 1,
            base_level: 120.0,
            diurnal_amplitude: 20.0,
            diurnal_period_s: 86_400.0,
            handover_period: 15,
            handover_width: 1,
            handover_drop: 30.0,
            noise_model: NoiseModel::Gaussian { sigma: 15.0 },
            scale_driver: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.length == 0 {
            return bad("length must be at least 1".into());
        }
        if self.step_seconds <= 0 {
            return bad(format!(
                "step_seconds must be positive, got {}",
                self.step_seconds
            ));
        }
        if self.handover_period <= 0 {
            return bad(format!(
                "handover_period must be positive, got {}",
                self.handover_period
            ));
        }
        if self.handover_width < 0 {
            return bad("handover_width must be non-negative".into());
        }
        if !(self.diurnal_period_s > 0.0) {
            return bad("diurnal_period_s must be positive".into());
        }
        let p = self.noise_model.param();
        if !(p.is_finite() && p >= 0.0) {
            return bad(format!(
                "noise parameter must be finite and non-negative, got {p}"
            ));
        }
        for (name, v) in [
            ("base_level", self.base_level),
            ("diurnal_amplitude", self.diurnal_amplitude),
            ("handover_drop", self.handover_drop),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if let Some(d) = self.scale_driver {
            if d.segment_len == 0 {
                return bad("scale_driver.segment_len must be at least 1".into());
            }
            if !(d.low >= 0.0 && d.high >= 0.0 && d.low.is_finite() && d.high.is_finite()) {
                return bad("scale_driver bounds must be finite and non-negative".into());
            }
        }
        Ok(())
    }

    /// Noise-free throughput at timestamp `ts`.
    pub fn deterministic_at(&self, ts: i64) -> f64 {
        let rel = ts - self.start_timestamp;
        let diurnal = self.diurnal_amplitude * (2.0 * PI * ts as f64 / self.diurnal_period_s).sin();
        let dip = if rel.rem_euclid(self.handover_period) < self.handover_width {
            self.handover_drop
        } else {
            0.0
        };
        self.base_level + diurnal - dip
    }
}

/// A generated trace plus the ground truth needed for oracle checks.
#[derive(Clone, Debug)]
pub struct SyntheticTrace {
    pub trace: Trace,
    pub deterministic: Vec<f64>,
    pub noise_scale: Vec<f64>,
    pub noise_model: NoiseModel,
}

impl SyntheticTrace {
    /// True `p`-quantile of throughput at slot `index`. Clamping at zero is
    /// monotone, so it commutes with the quantile.
    pub fn conditional_quantile(&self, index: usize, p: f64) -> f64 {
        (self.deterministic[index] + self.noise_scale[index] * self.noise_model.quantile(p))
            .max(0.0)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticTrace> {
    spec.validate()?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);
    let mut driver_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    driver_rng.set_stream(2);

    let timestamps: Vec<i64> = (0..spec.length as i64)
        .map(|i| spec.start_timestamp + i * spec.step_seconds)
        .collect();
    let deterministic: Vec<f64> = timestamps
        .iter()
        .map(|&ts| spec.deterministic_at(ts))
        .collect();

    let mut aux = BTreeMap::new();
    let noise_scale = match spec.scale_driver {
        None => vec![1.0; spec.length],
        Some(d) => {
            let mut cloud = Vec::with_capacity(spec.length);
            while cloud.len() < spec.length {
                let level = driver_rng.random_range(0.0..100.0);
                let n = d.segment_len.min(spec.length - cloud.len());
                cloud.extend(std::iter::repeat_n(level, n));
            }
            let scale = cloud
                .iter()
                .map(|c| d.low + (d.high - d.low) * c / 100.0)
                .collect();
            aux.insert(AuxKey::CloudPct, cloud);
            scale
        }
    };

    let throughput: Vec<f64> = deterministic
        .iter()
        .zip(&noise_scale)
        .map(|(det, s)| (det + s * spec.noise_model.sample(&mut noise_rng)).max(0.0))
        .collect();

    let trace = Trace::new(
        format!("synthetic-{}", spec.seed),
        timestamps,
        throughput,
        aux,
    )?;
    Ok(SyntheticTrace {
        trace,
        deterministic,
        noise_scale,
        noise_model: spec.noise_model,
    })
}
