use super::QuantileValue;
use crate::{Error, Result};

pub const DEFAULT_SHIFT_BINS: usize = 100;

/// Histogram estimate of the total-variation distance between two scalar
/// residual samples, over `bins` equal cells spanning the pooled range.
pub fn estimate_shift_tv(sim: &[f64], real: &[f64], bins: usize) -> Result<f64> {
    if sim.is_empty() || real.is_empty() {
        return Err(Error::invalid("shift estimate needs two non-empty samples"));
    }
    if bins == 0 {
        return Err(Error::invalid("bins must be >= 1"));
    }
    if sim.iter().chain(real).any(|v| !v.is_finite()) {
        return Err(Error::invalid("shift estimate needs finite samples"));
    }
    let (lo, hi) = sim
        .iter()
        .chain(real)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let width = hi - lo;
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in xs {
            let b = if width > 0.0 {
                (((x - lo) / width * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            h[b] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    };
    let (p, q) = (hist(sim), hist(real));
    Ok(0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Fraction of `residuals` at or below `r_star`.
pub fn coverage_delta_tilde(residuals: &[f64], r_star: QuantileValue) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::invalid("coverage needs a non-empty sample"));
    }
    let r = r_star.as_f64();
    let hit = residuals.iter().filter(|&&v| v <= r).count();
    Ok(hit as f64 / residuals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_examples() {
        let a = [0.1, 0.5, 0.9, 0.3];
        assert_eq!(estimate_shift_tv(&a, &a, 100).unwrap(), 0.0);
        assert_eq!(
            estimate_shift_tv(&[0.0, 0.1], &[5.0, 6.0], 100).unwrap(),
            1.0
        );
        assert!((estimate_shift_tv(&[0.0, 0.0], &[0.0, 1.0], 2).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(estimate_shift_tv(&[2.0], &[2.0, 2.0], 10).unwrap(), 0.0);
    }

    #[test]
    fn coverage_examples() {
        let r = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            coverage_delta_tilde(&r, QuantileValue::Infinite).unwrap(),
            1.0
        );
        assert_eq!(
            coverage_delta_tilde(&r, QuantileValue::Finite(2.0)).unwrap(),
            0.5
        );
        assert_eq!(
            coverage_delta_tilde(&r, QuantileValue::Finite(0.5)).unwrap(),
            0.0
        );
    }
}
