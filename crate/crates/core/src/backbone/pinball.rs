use crate::error::{Error, Result};

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidTau(tau))
    }
}

/// Pinball (quantile) loss `max(τ(y − ŷ), (τ − 1)(y − ŷ))`.
pub fn pinball_loss(y: f64, y_hat: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball_unchecked(y, y_hat, tau))
}

#[inline]
pub(crate) fn pinball_unchecked(y: f64, y_hat: f64, tau: f64) -> f64 {
    let r = y - y_hat;
    (tau * r).max((tau - 1.0) * r)
}

/// Subgradient of the pinball loss with respect to the prediction `ŷ`.
///
/// A zero residual counts as non-positive, so an exact fit pushes the
/// prediction down (the overestimation indicator is strict).
#[inline]
pub fn pinball_subgradient(y: f64, y_hat: f64, tau: f64) -> f64 {
    if y - y_hat > 0.0 {
        -tau
    } else {
        1.0 - tau
    }
}

/// Pinball loss averaged over a forecast horizon.
pub fn pinball_loss_horizon(y: &[f64], y_hat: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::LengthMismatch {
            expected: 1,
            actual: 0,
        });
    }
    let total: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(&a, &b)| pinball_unchecked(a, b, tau))
        .sum();
    Ok(total / y.len() as f64)
}
