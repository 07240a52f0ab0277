//! Training losses.
//!
//! `pinball` is the quantile loss on trajectory residuals, `surface` the
//! inflation surface proxy `q * sum_j 1/alpha_j`, and `mse_surface` the
//! MSE objective regularised by the per-sample surface of the inflating box.

use super::ScalingFactors;
use crate::{Error, Result};

/// `sum_i delta_bar * max(0, R_i - q) + (1 - delta_bar) * max(0, q - R_i)`.
pub fn pinball(residuals: &[f64], q: f64, delta_bar: f64) -> f64 {
    residuals
        .iter()
        .map(|&r| delta_bar * (r - q).max(0.0) + (1.0 - delta_bar) * (q - r).max(0.0))
        .sum()
}

/// Subgradient of [`pinball`] with respect to one residual.
#[inline]
pub fn pinball_dr(r: f64, q: f64, delta_bar: f64) -> f64 {
    if r > q {
        delta_bar
    } else if r < q {
        -(1.0 - delta_bar)
    } else {
        0.0
    }
}

/// `q * sum_j 1 / alpha_j`.
pub fn surface(q: f64, alpha: &ScalingFactors) -> f64 {
    q * alpha.omega_sum()
}

/// [`surface`] on raw factors, rejecting non-positive entries.
pub fn surface_checked(q: f64, alpha: &[f64]) -> Result<f64> {
    Ok(surface(q, &ScalingFactors::new(alpha.to_vec())?))
}

/// `c * l1 + l2`.
#[inline]
pub fn combined(l1: f64, l2: f64, c: f64) -> f64 {
    c * l1 + l2
}

/// Mean of `(pred - target)^2` over all entries.
pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// `mse + (1/B) sum_i max_j(alpha_j R_i^j) * sum_j 1/alpha_j` over a batch of
/// `B` component-residual rows.
pub fn mse_surface(
    mse: f64,
    component_residuals: &[Vec<f64>],
    alpha: &ScalingFactors,
) -> Result<f64> {
    if component_residuals.is_empty() {
        return Err(Error::invalid("mse-surface loss needs a non-empty batch"));
    }
    let a = alpha.as_slice();
    let mut acc = 0.0;
    for row in component_residuals {
        if row.len() != a.len() {
            return Err(Error::dim("component residuals", a.len(), row.len()));
        }
        if row.iter().any(|r| *r < 0.0) {
            return Err(Error::invalid("component residuals must be >= 0"));
        }
        acc += row.iter().zip(a).map(|(r, a)| a * r).fold(0.0, f64::max);
    }
    Ok(mse + acc / component_residuals.len() as f64 * alpha.omega_sum())
}
