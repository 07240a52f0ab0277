use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::divergence::{adjusted_epsilon, ceil_tol, DivergenceSpec};
use crate::{Error, Result};

/// A calibration quantile: a residual value, or `+inf` when the calibration
/// set is too small for the requested level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantileValue {
    Finite(f64),
    Infinite,
}

impl QuantileValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            QuantileValue::Finite(v) => Some(v),
            QuantileValue::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, QuantileValue::Infinite)
    }

    /// The value as a float, `+inf` included.
    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    /// Finite value or [`Error::InsufficientCalibration`].
    pub fn require_finite(self) -> Result<f64> {
        self.finite().ok_or(Error::InsufficientCalibration)
    }
}

impl PartialOrd for QuantileValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.as_f64().partial_cmp(&other.as_f64())
    }
}

impl fmt::Display for QuantileValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantileValue::Finite(v) => write!(f, "{v}"),
            QuantileValue::Infinite => f.write_str("+inf"),
        }
    }
}

impl Serialize for QuantileValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            QuantileValue::Finite(v) => s.serialize_f64(*v),
            QuantileValue::Infinite => s.serialize_str("+inf"),
        }
    }
}

impl<'de> Deserialize<'de> for QuantileValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v.is_finite() => Ok(QuantileValue::Finite(v)),
            Raw::Str(s) if s == "+inf" || s == "inf" => Ok(QuantileValue::Infinite),
            _ => Err(serde::de::Error::custom(
                "expected a finite number or \"+inf\"",
            )),
        }
    }
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("empty calibration set"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("residuals must not be NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Index `ceil((m + 1)(1 - eps))` of the conformal quantile (1-based).
pub fn conformal_index(m: usize, epsilon: f64) -> usize {
    ceil_tol((m as f64 + 1.0) * (1.0 - epsilon)).max(1.0) as usize
}

/// The `ceil((m + 1)(1 - eps))`-th smallest residual, or `+inf` when that
/// index exceeds `m`.
///
/// `epsilon = 0` is accepted and always yields `+inf`; it arises as an
/// adjusted level on the feasibility boundary.
pub fn conformal_quantile(residuals: &[f64], epsilon: f64) -> Result<QuantileValue> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "epsilon must be in [0,1), got {epsilon}"
        )));
    }
    let v = sorted(residuals)?;
    let ell = conformal_index(v.len(), epsilon);
    Ok(if ell > v.len() {
        QuantileValue::Infinite
    } else {
        QuantileValue::Finite(v[ell - 1])
    })
}

/// Plain empirical `level`-quantile: the `ceil(level * m)`-th smallest value.
pub fn empirical_quantile(values: &[f64], level: f64) -> Result<f64> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::invalid(format!(
            "quantile level must be in (0,1], got {level}"
        )));
    }
    let v = sorted(values)?;
    let k = (ceil_tol(level * v.len() as f64) as usize).clamp(1, v.len());
    Ok(v[k - 1])
}

/// Calibration quantile that stays valid under a distribution shift of the
/// given divergence radius, with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustQuantileResult {
    pub epsilon: f64,
    pub epsilon_bar: f64,
    pub m: usize,
    /// 1-based order statistic used; `m + 1` stands for `+inf`.
    pub index: usize,
    pub r_star: QuantileValue,
    pub divergence: DivergenceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_source: Option<String>,
}

impl RobustQuantileResult {
    /// Target confidence `1 - epsilon`.
    pub fn delta(&self) -> f64 {
        1.0 - self.epsilon
    }
}

/// Conformal quantile at the adjusted miscoverage level for `divergence`.
pub fn robust_quantile(
    residuals: &[f64],
    epsilon: f64,
    divergence: &DivergenceSpec,
) -> Result<RobustQuantileResult> {
    if residuals.is_empty() {
        return Err(Error::invalid("empty calibration set"));
    }
    let m = residuals.len();
    let epsilon_bar = adjusted_epsilon(epsilon, m, divergence)?;
    let r_star = conformal_quantile(residuals, epsilon_bar)?;
    Ok(RobustQuantileResult {
        epsilon,
        epsilon_bar,
        m,
        index: conformal_index(m, epsilon_bar).min(m + 1),
        r_star,
        divergence: *divergence,
        calibration_source: None,
    })
}
