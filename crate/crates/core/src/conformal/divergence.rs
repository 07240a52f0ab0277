//! Worst-case coverage maps for f-divergence balls and the adjusted
//! miscoverage level derived from them.
//!
//! `g(beta)` is the smallest probability an event of probability `beta` can
//! have under any distribution within divergence `tau`; `g_inv(gamma)` is the
//! largest `beta` whose worst case stays at or below `gamma`.

use serde::{Deserialize, Serialize};

use super::quantile::conformal_index;
use crate::{Error, Result};

pub const BISECTION_TOL: f64 = 1e-12;
pub const BISECTION_MAX_STEPS: usize = 200;
/// Calibration sizes above this are reported as infeasible.
pub const MAX_CALIBRATION_SIZE: usize = 1_000_000_000;

/// Ceiling that ignores floating-point noise just above an integer.
pub(crate) fn ceil_tol(x: f64) -> f64 {
    (x - 1e-9).ceil()
}

/// Convex `f` with `f(1) = 0` generating an f-divergence.
pub trait DivergenceGenerator {
    fn f(&self, z: f64) -> f64;

    /// `lim_{z -> inf} f(z) / z`, possibly `+inf`.
    fn recession(&self) -> f64;

    /// `b * f(a / b)`, extended to `b = 0` by its limit `a * recession`.
    fn perspective(&self, a: f64, b: f64) -> f64 {
        if b > 0.0 {
            b * self.f(a / b)
        } else if a > 0.0 {
            a * self.recession()
        } else {
            0.0
        }
    }
}

/// `f(z) = |z - 1| / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TotalVariation;

impl DivergenceGenerator for TotalVariation {
    fn f(&self, z: f64) -> f64 {
        0.5 * (z - 1.0).abs()
    }
    fn recession(&self) -> f64 {
        0.5
    }
}

/// `f(z) = z log z`.
#[derive(Debug, Clone, Copy, Default)]
pub struct KullbackLeibler;

impl DivergenceGenerator for KullbackLeibler {
    fn f(&self, z: f64) -> f64 {
        if z > 0.0 {
            z * z.ln()
        } else {
            0.0
        }
    }
    fn recession(&self) -> f64 {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceKind {
    TotalVariation,
    Kl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    pub tau: f64,
}

impl Default for DivergenceSpec {
    fn default() -> Self {
        Self::tv(0.0)
    }
}

impl DivergenceSpec {
    pub fn tv(tau: f64) -> Self {
        Self {
            kind: DivergenceKind::TotalVariation,
            tau,
        }
    }

    pub fn kl(tau: f64) -> Self {
        Self {
            kind: DivergenceKind::Kl,
            tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!(
                "divergence radius must be >= 0, got {}",
                self.tau
            )));
        }
        if self.kind == DivergenceKind::TotalVariation && self.tau > 1.0 {
            return Err(Error::invalid(format!(
                "total-variation radius must be <= 1, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn generator(&self) -> &'static dyn DivergenceGenerator {
        match self.kind {
            DivergenceKind::TotalVariation => &TotalVariation,
            DivergenceKind::Kl => &KullbackLeibler,
        }
    }

    /// `g` for this ball; closed form for total variation.
    pub fn g(&self, beta: f64) -> Result<f64> {
        match self.kind {
            DivergenceKind::TotalVariation => g_tv(beta, self.tau),
            DivergenceKind::Kl => g_numeric(self.generator(), self.tau, beta),
        }
    }

    /// `g_inv` for this ball; closed form for total variation.
    pub fn g_inv(&self, gamma: f64) -> Result<f64> {
        match self.kind {
            DivergenceKind::TotalVariation => g_tv_inv(gamma, self.tau),
            DivergenceKind::Kl => g_numeric_inv(self.generator(), self.tau, gamma),
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be in [0,1], got {v}")))
    }
}

pub fn g_tv(beta: f64, tau: f64) -> Result<f64> {
    check_unit("beta", beta)?;
    check_unit("tau", tau)?;
    Ok((beta - tau).max(0.0))
}

pub fn g_tv_inv(gamma: f64, tau: f64) -> Result<f64> {
    check_unit("tau", tau)?;
    if gamma < 0.0 {
        return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    if gamma >= 1.0 - tau {
        return Err(Error::Infeasible {
            reason: format!("coverage {gamma} is not below 1 - tau = {}", 1.0 - tau),
            min_calibration: None,
        });
    }
    Ok(gamma + tau)
}

fn phi(f: &dyn DivergenceGenerator, beta: f64, z: f64) -> f64 {
    f.perspective(z, beta) + f.perspective(1.0 - z, 1.0 - beta)
}

/// Infimum of `z in [0, beta]` with `phi(z) <= tau`, by bisection.
pub fn g_numeric(f: &dyn DivergenceGenerator, tau: f64, beta: f64) -> Result<f64> {
    check_unit("beta", beta)?;
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("tau must be >= 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(beta);
    }
    if phi(f, beta, 0.0) <= tau {
        return Ok(0.0);
    }
    // phi is convex with phi(beta) = 0: lo infeasible, hi feasible
    let (mut lo, mut hi) = (0.0, beta);
    for _ in 0..BISECTION_MAX_STEPS {
        if hi - lo <= BISECTION_TOL {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if phi(f, beta, mid) <= tau {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::NoConvergence { residual: hi - lo })
}

/// `sup { beta in [0,1] : g(beta) <= gamma }`, saturating at 1.
fn sup_feasible(f: &dyn DivergenceGenerator, tau: f64, gamma: f64) -> Result<f64> {
    if g_numeric(f, tau, 1.0)? <= gamma {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_MAX_STEPS {
        if hi - lo <= BISECTION_TOL {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        if g_numeric(f, tau, mid)? <= gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence { residual: hi - lo })
}

/// Numeric inverse; infeasible when even `beta = 1` keeps `g` at or below `gamma`.
pub fn g_numeric_inv(f: &dyn DivergenceGenerator, tau: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!(
            "gamma must be in [0,1], got {gamma}"
        )));
    }
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("tau must be >= 0, got {tau}")));
    }
    let g1 = g_numeric(f, tau, 1.0)?;
    if g1 <= gamma {
        return Err(Error::Infeasible {
            reason: format!("coverage {gamma} is not below the worst-case level {g1}"),
            min_calibration: None,
        });
    }
    sup_feasible(f, tau, gamma)
}

fn check_epsilon(epsilon: f64, m: usize) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must be in (0,1], got {epsilon}"
        )));
    }
    if m == 0 {
        return Err(Error::invalid("calibration size must be >= 1"));
    }
    Ok(())
}

fn infeasible_with_size(reason: String, epsilon: f64, spec: &DivergenceSpec) -> Error {
    Error::Infeasible {
        reason,
        min_calibration: min_calibration_size(1.0 - epsilon, spec).ok(),
    }
}

/// Adjusted miscoverage level for `m` calibration points.
///
/// Total variation uses `1 - (1 + 1/m)(1 - eps + tau)`; other divergences go
/// through [`adjusted_epsilon_numeric`].
pub fn adjusted_epsilon(epsilon: f64, m: usize, spec: &DivergenceSpec) -> Result<f64> {
    check_epsilon(epsilon, m)?;
    spec.validate()?;
    match spec.kind {
        DivergenceKind::TotalVariation => {
            let tau = spec.tau;
            if epsilon <= tau {
                return Err(Error::Infeasible {
                    reason: format!("miscoverage {epsilon} must exceed the shift radius {tau}"),
                    min_calibration: None,
                });
            }
            let eb = 1.0 - (1.0 + 1.0 / m as f64) * (1.0 - epsilon + tau);
            if eb < 0.0 {
                return Err(infeasible_with_size(
                    format!(
                        "{m} calibration points are too few for epsilon = {epsilon}, tau = {tau}"
                    ),
                    epsilon,
                    spec,
                ));
            }
            Ok(eb.min(epsilon))
        }
        _ => adjusted_epsilon_numeric(epsilon, m, spec.generator(), spec.tau),
    }
}

/// `eps_m = 1 - g((1 + 1/m) g_inv(1 - eps))`, then `1 - g_inv(1 - eps_m)`,
/// with both maps evaluated by bisection.
pub fn adjusted_epsilon_numeric(
    epsilon: f64,
    m: usize,
    f: &dyn DivergenceGenerator,
    tau: f64,
) -> Result<f64> {
    check_epsilon(epsilon, m)?;
    let gi = match g_numeric_inv(f, tau, 1.0 - epsilon) {
        Ok(v) => v,
        Err(Error::Infeasible { reason, .. }) => {
            return Err(Error::Infeasible {
                reason,
                min_calibration: None,
            })
        }
        Err(e) => return Err(e),
    };
    let arg = (1.0 + 1.0 / m as f64) * gi;
    if arg > 1.0 {
        return Err(Error::Infeasible {
            reason: format!(
                "{m} calibration points are too few for epsilon = {epsilon}, tau = {tau}"
            ),
            min_calibration: size_from_inverse(gi).ok(),
        });
    }
    let eps_m = 1.0 - g_numeric(f, tau, arg)?;
    let eb = 1.0 - sup_feasible(f, tau, 1.0 - eps_m)?;
    Ok(eb.clamp(0.0, epsilon))
}

fn size_from_inverse(gi: f64) -> Result<usize> {
    if !(gi < 1.0) {
        return Err(Error::Infeasible {
            reason: "worst-case inverse coverage reaches 1".into(),
            min_calibration: None,
        });
    }
    let bound = ceil_tol(gi / (1.0 - gi));
    if !(bound < MAX_CALIBRATION_SIZE as f64) {
        return Err(Error::Infeasible {
            reason: format!("required calibration size exceeds {MAX_CALIBRATION_SIZE}"),
            min_calibration: None,
        });
    }
    Ok(bound as usize + 1)
}

/// Smallest `L` with `L > ceil(g_inv(delta) / (1 - g_inv(delta)))`, the
/// size at which the adjusted level stops being negative.
pub fn min_calibration_size(delta: f64, spec: &DivergenceSpec) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must be in (0,1), got {delta}"
        )));
    }
    spec.validate()?;
    size_from_inverse(spec.g_inv(delta)?)
}

/// Smallest `L` for which the robust quantile is finite, i.e. additionally
/// `ceil((L + 1)(1 - eps_bar)) <= L`.
pub fn min_calibration_size_strict(delta: f64, spec: &DivergenceSpec) -> Result<usize> {
    let start = min_calibration_size(delta, spec)?;
    let eps = 1.0 - delta;
    let ok = |l: usize| -> Result<bool> {
        match adjusted_epsilon(eps, l, spec) {
            Ok(eb) => Ok(conformal_index(l, eb) <= l),
            Err(Error::Infeasible { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if ok(start)? {
        return Ok(start);
    }
    let (mut bad, mut good) = (start, start);
    loop {
        good = good.saturating_mul(2);
        if good > MAX_CALIBRATION_SIZE {
            return Err(Error::Infeasible {
                reason: format!("required calibration size exceeds {MAX_CALIBRATION_SIZE}"),
                min_calibration: None,
            });
        }
        if ok(good)? {
            break;
        }
        bad = good;
    }
    while good - bad > 1 {
        let mid = bad + (good - bad) / 2;
        if ok(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_closed_form_examples() {
        assert!((g_tv(0.9, 0.225).unwrap() - 0.675).abs() < 1e-15);
        assert_eq!(g_tv(0.4, 0.0).unwrap(), 0.4);
        assert_eq!(g_tv_inv(0.4, 0.0).unwrap(), 0.4);
        assert!((g_tv_inv(0.8, 0.1).unwrap() - 0.9).abs() < 1e-15);
        assert!(matches!(g_tv_inv(0.9, 0.1), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn numeric_matches_tv_including_endpoints() {
        for &tau in &[0.0, 0.05, 0.3, 0.9] {
            for &beta in &[0.0, 0.1, 0.5, 0.95, 1.0] {
                let a = g_numeric(&TotalVariation, tau, beta).unwrap();
                let b = g_tv(beta, tau).unwrap();
                assert!((a - b).abs() < 1e-9, "beta {beta} tau {tau}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn kl_is_between_and_decreasing() {
        let g1 = g_numeric(&KullbackLeibler, 0.01, 0.9).unwrap();
        assert!(g1 > 0.8 && g1 < 0.9, "{g1}");
        let g2 = g_numeric(&KullbackLeibler, 0.02, 0.9).unwrap();
        assert!(g2 < g1);
        assert_eq!(g_numeric(&KullbackLeibler, 0.0, 0.37).unwrap(), 0.37);
    }

    #[test]
    fn adjusted_examples() {
        let e = adjusted_epsilon(0.23, 10_000, &DivergenceSpec::tv(0.225)).unwrap();
        assert!((e - 0.0049005).abs() < 1e-7, "{e}");
        let e = adjusted_epsilon(0.3, 9, &DivergenceSpec::tv(0.1)).unwrap();
        assert!((e - 1.0 / 9.0).abs() < 1e-12);
        let n = adjusted_epsilon_numeric(0.3, 9, &TotalVariation, 0.1).unwrap();
        assert!((n - e).abs() < 1e-9);
        let big = adjusted_epsilon(0.1, 100_000_000, &DivergenceSpec::tv(0.0)).unwrap();
        assert!((big - 0.1).abs() < 1e-7);
    }

    #[test]
    fn infeasible_reports_minimum_size() {
        match adjusted_epsilon(0.23, 100, &DivergenceSpec::tv(0.225)) {
            Err(Error::Infeasible {
                min_calibration, ..
            }) => assert_eq!(min_calibration, Some(200)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            adjusted_epsilon(0.2, 1000, &DivergenceSpec::tv(0.2)),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn min_calibration_examples() {
        assert_eq!(
            min_calibration_size(0.77, &DivergenceSpec::tv(0.225)).unwrap(),
            200
        );
        assert_eq!(
            min_calibration_size(0.5, &DivergenceSpec::tv(0.0)).unwrap(),
            2
        );
        assert_eq!(
            min_calibration_size_strict(0.77, &DivergenceSpec::tv(0.225)).unwrap(),
            399
        );
        assert!(min_calibration_size(0.775 - 1e-13, &DivergenceSpec::tv(0.225)).is_err());
    }
}
