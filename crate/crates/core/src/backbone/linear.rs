use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pinball::pinball_subgradient;
use super::tree::order_statistic_quantile;
use super::Objective;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearParams {
    pub steps: usize,
    pub step_size: f64,
    /// Rows per (sub)gradient step; `None` uses the full training set.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            steps: 500,
            step_size: 0.5,
            batch_size: None,
            seed: 0,
        }
    }
}

/// Linear model on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRegressor {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearRegressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.slope_term(x)
    }

    fn slope_term(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.means)
            .zip(&self.scales)
            .zip(&self.weights)
            .map(|(((v, m), s), w)| w * (v - m) / s)
            .sum()
    }
}

/// Subgradient descent on the slopes with the intercept profiled out
/// exactly at every step (τ-quantile or mean of the partial residuals).
/// The returned slopes are the average of the second half of the iterates.
pub(crate) fn fit_linear(
    features: &[f64],
    n_rows: usize,
    n_features: usize,
    y: &[f64],
    objective: Objective,
    params: &LinearParams,
    stream: u64,
) -> LinearRegressor {
    let mut means = vec![0.0; n_features];
    let mut scales = vec![1.0; n_features];
    for f in 0..n_features {
        let col = (0..n_rows).map(|i| features[i * n_features + f]);
        let mean = col.clone().sum::<f64>() / n_rows as f64;
        let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_rows as f64;
        means[f] = mean;
        if var > 0.0 {
            scales[f] = var.sqrt();
        }
    }
    let z: Vec<f64> = (0..n_rows * n_features)
        .map(|k| (features[k] - means[k % n_features]) / scales[k % n_features])
        .collect();

    let slope = |w: &[f64], i: usize| -> f64 {
        z[i * n_features..(i + 1) * n_features]
            .iter()
            .zip(w)
            .map(|(a, b)| a * b)
            .sum()
    };
    let profile = |w: &[f64]| -> f64 {
        let mut partial: Vec<f64> = (0..n_rows).map(|i| y[i] - slope(w, i)).collect();
        match objective {
            Objective::SquaredError => partial.iter().sum::<f64>() / n_rows as f64,
            Objective::Quantile { tau } => order_statistic_quantile(&mut partial, tau),
        }
    };

    // Residuals this close to zero count as sitting on the kink; otherwise
    // rounding noise of order 1e-15 would flip subgradient signs.
    let kink_tol = 1e-9 * (1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(stream);
    let mut w = vec![0.0; n_features];
    let mut b = profile(&w);
    let mut avg = vec![0.0; n_features];
    let burn_in = params.steps / 2;
    let mut grad = vec![0.0; n_features];
    for k in 0..params.steps {
        let rows: Vec<usize> = match params.batch_size {
            Some(bs) if bs < n_rows => sample(&mut rng, n_rows, bs).into_vec(),
            _ => (0..n_rows).collect(),
        };
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &i in &rows {
            let p = b + slope(&w, i);
            let g = match objective {
                Objective::SquaredError => p - y[i],
                Objective::Quantile { tau } => {
                    if (y[i] - p).abs() <= kink_tol {
                        1.0 - tau
                    } else {
                        pinball_subgradient(y[i], p, tau)
                    }
                }
            };
            for (gf, zf) in grad
                .iter_mut()
                .zip(&z[i * n_features..(i + 1) * n_features])
            {
                *gf += g * zf;
            }
        }
        let eta = params.step_size / ((k + 1) as f64).sqrt() / rows.len() as f64;
        for (wf, gf) in w.iter_mut().zip(&grad) {
            *wf -= eta * gf;
        }
        b = profile(&w);
        if k >= burn_in {
            for (a, wf) in avg.iter_mut().zip(&w) {
                *a += wf;
            }
        }
    }
    let kept = (params.steps - burn_in).max(1) as f64;
    let weights: Vec<f64> = if params.steps == 0 {
        w
    } else {
        avg.iter().map(|a| a / kept).collect()
    };
    let intercept = profile(&weights);
    LinearRegressor {
        means,
        scales,
        weights,
        intercept,
    }
}
