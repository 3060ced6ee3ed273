//! Budget-guided coarse-to-fine quantile selection, and the budget-scale
//! calibrator used for point-predictor baselines.
//!
//! Selection runs in two stages on the calibration split:
//!
//! 1. Boundary search. `R(τ)` is assumed roughly increasing in τ, so the
//!    largest budget-feasible level is bracketed by bisection on
//!    `[tau_min, tau_max]` until the bracket is narrower than `delta`.
//! 2. Refinement. `M` evenly spaced levels spanning the bracket are
//!    evaluated; the feasible one with the lowest MAE wins. If none is
//!    feasible, the level minimizing `A(τ) + λ·max(R(τ) − ε, 0)` is used.
//!
//! If bisection observes `R` clearly decreasing in τ (by more than
//! `monotone_slack`), the bracket is abandoned and `4M` levels across the
//! whole interval are evaluated instead.

mod evaluator;

pub use evaluator::{
    evaluate_candidate, Candidate, CandidateEvaluation, CandidateSource, Evaluation, Evaluator,
    QuantileFamily,
};

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneParams;
use crate::data::DatasetView;
use crate::error::{Error, Result};
use crate::metrics::{mae, over_rate, PredictionBatch};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskBudgetConfig {
    pub epsilon: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub delta: f64,
    #[serde(rename = "M")]
    pub m: usize,
    /// Fallback penalty weight. `None` resolves to 1000 × mean training
    /// throughput when selection runs on data.
    pub lambda: Option<f64>,
    pub monotone_slack: f64,
}

impl Default for RiskBudgetConfig {
    fn default() -> Self {
        RiskBudgetConfig {
            epsilon: 0.35,
            tau_min: 0.15,
            tau_max: 0.40,
            delta: 0.05,
            m: 5,
            lambda: None,
            monotone_slack: 0.02,
        }
    }
}

pub const LAMBDA_PER_MBPS: f64 = 1000.0;

impl RiskBudgetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRiskConfig(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if !(self.tau_min > 0.0 && self.tau_min < self.tau_max && self.tau_max < 1.0) {
            return bad(format!(
                "need 0 < tau_min < tau_max < 1, got [{}, {}]",
                self.tau_min, self.tau_max
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if self.m < 2 {
            return bad(format!("M must be at least 2, got {}", self.m));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("lambda must be finite and non-negative, got {l}"));
            }
        }
        if !(self.monotone_slack >= 0.0) {
            return bad("monotone_slack must be non-negative".into());
        }
        Ok(())
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        RiskBudgetConfig { epsilon, ..self }
    }

    /// Fill in the default penalty weight for a dataset with the given mean
    /// throughput, keeping an explicit `lambda` untouched.
    pub fn resolve_lambda(self, mean_throughput: f64) -> Self {
        RiskBudgetConfig {
            lambda: Some(self.lambda.unwrap_or(LAMBDA_PER_MBPS * mean_throughput)),
            ..self
        }
    }

    /// Upper bound on source invocations for one selection.
    pub fn training_budget(&self) -> usize {
        2 + self.max_bisection_steps() + self.m
    }

    pub fn max_bisection_steps(&self) -> usize {
        let ratio = (self.tau_max - self.tau_min) / self.delta;
        if ratio <= 1.0 {
            0
        } else {
            ratio.log2().ceil() as usize
        }
    }
}

/// `m` evenly spaced levels from `a` to `b`, both endpoints included exactly.
pub fn lin_space(a: f64, b: f64, m: usize) -> Result<Vec<f64>> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(Error::InvalidGrid(format!("need a <= b, got [{a}, {b}]")));
    }
    match m {
        0 => Err(Error::InvalidGrid("grid size must be at least 1".into())),
        1 if a == b => Ok(vec![a]),
        1 => Err(Error::InvalidGrid(
            "a single-point grid needs a == b".into(),
        )),
        _ => {
            let step = (b - a) / (m - 1) as f64;
            let mut grid: Vec<f64> = (0..m).map(|k| a + step * k as f64).collect();
            grid[m - 1] = b;
            Ok(grid)
        }
    }
}

/// Which branch the boundary search ended in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchRegime {
    /// `R(tau_max) <= ε`: the whole interval is feasible.
    AllFeasible,
    /// `R(tau_min) > ε`: even the most conservative level violates the budget.
    BudgetViolation,
    Bisection,
    /// Bisection saw `R` decrease in τ; the whole interval is scanned.
    NonMonotone,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub tau_l: f64,
    pub tau_r: f64,
    pub r_l: f64,
    pub r_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub lower: f64,
    pub upper: f64,
    pub regime: SearchRegime,
    /// Evaluations in the order they were requested.
    pub evaluations: Vec<Evaluation>,
    /// Bracket after each bisection update.
    pub steps: Vec<BisectionStep>,
}

fn wrap(tau: f64) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        e @ Error::EvaluatorFailure { .. } => e,
        e => Error::EvaluatorFailure {
            tau,
            message: e.to_string(),
        },
    }
}

fn decreasing_pair(evals: &[Evaluation], slack: f64) -> bool {
    let mut sorted = evals.to_vec();
    sorted.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    let mut max_so_far = f64::NEG_INFINITY;
    for e in &sorted {
        if e.over_rate + slack < max_so_far {
            return true;
        }
        max_so_far = max_so_far.max(e.over_rate);
    }
    false
}

pub fn boundary_search<S: CandidateSource>(
    config: &RiskBudgetConfig,
    evaluator: &Evaluator<S>,
) -> Result<Boundary> {
    config.validate()?;
    let eps = config.epsilon;
    let eval = |tau: f64| evaluator.evaluate(tau).map_err(wrap(tau));

    let (lo, hi) = (config.tau_min, config.tau_max);
    let (e_lo, e_hi) = rayon::join(|| eval(lo), || eval(hi));
    let (e_lo, e_hi) = (e_lo?, e_hi?);
    let mut evaluations = vec![e_lo, e_hi];

    if e_hi.over_rate <= eps {
        return Ok(Boundary {
            lower: hi,
            upper: hi,
            regime: SearchRegime::AllFeasible,
            evaluations,
            steps: Vec::new(),
        });
    }
    if e_lo.over_rate > eps {
        return Ok(Boundary {
            lower: lo,
            upper: lo,
            regime: SearchRegime::BudgetViolation,
            evaluations,
            steps: Vec::new(),
        });
    }

    let (mut l, mut r) = (e_lo, e_hi);
    let mut steps = Vec::new();
    while r.tau - l.tau >= config.delta {
        let mid = (l.tau + r.tau) / 2.0;
        let e_mid = eval(mid)?;
        evaluations.push(e_mid);
        if e_mid.over_rate <= eps {
            l = e_mid;
        } else {
            r = e_mid;
        }
        steps.push(BisectionStep {
            tau_l: l.tau,
            tau_r: r.tau,
            r_l: l.over_rate,
            r_r: r.over_rate,
        });
        if decreasing_pair(&evaluations, config.monotone_slack) {
            return Ok(Boundary {
                lower: lo,
                upper: hi,
                regime: SearchRegime::NonMonotone,
                evaluations,
                steps,
            });
        }
    }
    Ok(Boundary {
        lower: l.tau,
        upper: r.tau,
        regime: SearchRegime::Bisection,
        evaluations,
        steps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub epsilon: f64,
    pub lambda: f64,
    pub tau_star: f64,
    pub selected: Evaluation,
    pub boundary: (f64, f64),
    pub regime: SearchRegime,
    pub coarse: Vec<Evaluation>,
    pub steps: Vec<BisectionStep>,
    pub fine_grid: Vec<Evaluation>,
    pub feasible: bool,
    pub fallback_used: bool,
    /// Source invocations caused by this selection (cache hits excluded).
    pub n_trainings: usize,
}

/// Picks the most accurate level with `over_rate <= epsilon`, or, when none
/// qualifies, the minimizer of `mae + lambda * max(over_rate - epsilon, 0)`.
/// The flag is true when the pick is feasible.
pub fn choose(grid: &[Evaluation], epsilon: f64, lambda: f64) -> Result<(Evaluation, bool)> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let feasible_best = grid.iter().filter(|e| e.over_rate <= epsilon).fold(
        None::<Evaluation>,
        |best, e| match best {
            // ties go to the larger (less conservative) level
            Some(b) if b.mae < e.mae || (b.mae == e.mae && b.tau > e.tau) => Some(b),
            _ => Some(*e),
        },
    );
    if let Some(e) = feasible_best {
        return Ok((e, true));
    }
    let penalized = |e: &Evaluation| e.mae + lambda * (e.over_rate - epsilon).max(0.0);
    let best = grid.iter().skip(1).fold(grid[0], |b, e| {
        // ties go to the smaller (safer) level
        if penalized(&b) < penalized(e) || (penalized(&b) == penalized(e) && b.tau < e.tau) {
            b
        } else {
            *e
        }
    });
    Ok((best, false))
}

/// Core selection over an evaluator. `config.lambda` must be resolved.
pub fn run_selection<S: CandidateSource>(
    config: &RiskBudgetConfig,
    evaluator: &Evaluator<S>,
) -> Result<SelectionResult> {
    config.validate()?;
    let lambda = config
        .lambda
        .ok_or_else(|| Error::InvalidRiskConfig("lambda has not been resolved".into()))?;
    let before = evaluator.trainings();
    let boundary = boundary_search(config, evaluator)?;

    let grid = match boundary.regime {
        SearchRegime::NonMonotone => lin_space(boundary.lower, boundary.upper, 4 * config.m)?,
        _ if boundary.lower == boundary.upper => lin_space(boundary.lower, boundary.upper, 1)?,
        _ => lin_space(boundary.lower, boundary.upper, config.m)?,
    };
    let fine_grid: Vec<Evaluation> = grid
        .par_iter()
        .map(|&tau| evaluator.evaluate(tau).map_err(wrap(tau)))
        .collect::<Result<_>>()?;

    let eps = config.epsilon;
    let (selected, feasible) = choose(&fine_grid, eps, lambda)?;

    Ok(SelectionResult {
        epsilon: eps,
        lambda,
        tau_star: selected.tau,
        selected,
        boundary: (boundary.lower, boundary.upper),
        regime: boundary.regime,
        coarse: boundary.evaluations,
        steps: boundary.steps,
        fine_grid,
        feasible,
        fallback_used: !feasible,
        n_trainings: evaluator.trainings() - before,
    })
}

/// Full selection on data: resolves λ from the mean training throughput,
/// runs the search and returns the selected candidate with its model.
pub fn select_quantile(
    config: &RiskBudgetConfig,
    train: DatasetView<'_>,
    cal: DatasetView<'_>,
    params: &BackboneParams,
) -> Result<(SelectionResult, Arc<CandidateEvaluation>)> {
    let config = config.resolve_lambda(train.mean_target());
    let evaluator = Evaluator::new(QuantileFamily {
        train,
        cal,
        params: *params,
    });
    let result = run_selection(&config, &evaluator)?;
    let chosen = evaluator.candidate(result.tau_star)?;
    Ok((result, chosen))
}

/// Scale levels 0.50, 0.51, …, 1.00.
pub fn default_c_grid() -> Vec<f64> {
    (50..=100).map(|k| k as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSelection {
    pub c_star: f64,
    pub feasible: bool,
    pub mae: f64,
    pub over_rate: f64,
}

/// Choose the factor `c` minimizing `MAE(c·Ŷ)` subject to
/// `OverRate(c·Ŷ) <= ε`, by exhaustive search over `c_grid`. Ties in MAE go
/// to the larger `c`. Without a feasible factor the one with the lowest
/// OverRate is returned (ties to the smaller `c`).
pub fn budget_scale_calibrate(
    cal: &PredictionBatch,
    epsilon: f64,
    c_grid: &[f64],
) -> Result<ScaleSelection> {
    if cal.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if c_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if let Some(c) = c_grid.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidGrid(format!(
            "scale factors must be positive, got {c}"
        )));
    }
    let scored: Vec<ScaleSelection> = c_grid
        .par_iter()
        .map(|&c| {
            let b = cal.scaled(c);
            Ok(ScaleSelection {
                c_star: c,
                feasible: false,
                mae: mae(&b)?,
                over_rate: over_rate(&b)?,
            })
        })
        .collect::<Result<_>>()?;

    let feasible = scored.iter().filter(|s| s.over_rate <= epsilon).fold(
        None::<&ScaleSelection>,
        |best, s| match best {
            Some(b) if b.mae < s.mae || (b.mae == s.mae && b.c_star > s.c_star) => Some(b),
            _ => Some(s),
        },
    );
    if let Some(s) = feasible {
        return Ok(ScaleSelection {
            feasible: true,
            ..s.clone()
        });
    }
    let safest = scored
        .iter()
        .fold(None::<&ScaleSelection>, |best, s| match best {
            Some(b)
                if b.over_rate < s.over_rate
                    || (b.over_rate == s.over_rate && b.c_star < s.c_star) =>
            {
                Some(b)
            }
            _ => Some(s),
        })
        .expect("grid is non-empty");
    Ok(safest.clone())
}
