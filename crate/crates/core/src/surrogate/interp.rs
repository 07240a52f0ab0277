//! Linear interpolation from a coarse predicted trajectory to every time step.

use crate::linalg::Matrix;
use crate::{Error, Result};

fn refinement(nk_trained: usize, nk_full: usize, n: usize) -> Result<(usize, usize)> {
    if n == 0 || nk_trained == 0 || nk_trained % n != 0 || nk_full % n != 0 {
        return Err(Error::invalid(format!(
            "trajectory widths {nk_trained}, {nk_full} must be positive multiples of n = {n}"
        )));
    }
    if nk_full < nk_trained || nk_full % nk_trained != 0 {
        return Err(Error::invalid(format!(
            "full width {nk_full} is not an integer refinement of {nk_trained}"
        )));
    }
    Ok((nk_trained / n, nk_full / nk_trained))
}

/// Interpolation matrix of shape `nK_full x (n + nK_trained)` acting on
/// `[s_0; coarse prediction]`.
///
/// The coarse prediction holds time steps `f, 2f, ..., K_full` with
/// `f = nK_full / nK_trained`. Those steps are copied; a step in between is
/// the linear blend of its two neighbouring coarse steps, where step 0 is the
/// initial state.
pub fn build_interp_matrix(nk_trained: usize, nk_full: usize, n: usize) -> Result<Matrix> {
    let (k_trained, factor) = refinement(nk_trained, nk_full, n)?;
    let k_full = k_trained * factor;
    let mut w = Matrix::zeros(nk_full, n + nk_trained);
    // column of state component r at coarse step p (p = 0 is s_0)
    let col = |p: usize, r: usize| if p == 0 { r } else { n + (p - 1) * n + r };
    for k in 1..=k_full {
        let p = k / factor;
        let rem = k % factor;
        for r in 0..n {
            let row = (k - 1) * n + r;
            if rem == 0 {
                w[(row, col(p, r))] = 1.0;
            } else {
                let t = rem as f64 / factor as f64;
                w[(row, col(p, r))] += 1.0 - t;
                w[(row, col(p + 1, r))] += t;
            }
        }
    }
    Ok(w)
}

/// Extends per-component inflation widths from the coarse steps to all steps.
///
/// Steps before the first coarse step take that step's width; the initial
/// state carries no residual to interpolate from.
pub fn interpolate_omega(omega: &[f64], n: usize, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::invalid("refinement factor must be >= 1"));
    }
    let nk_full = omega.len() * factor;
    refinement(omega.len(), nk_full, n)?;
    let k_full = nk_full / n;
    let at = |p: usize, r: usize| omega[(p - 1) * n + r];
    let mut out = vec![0.0; nk_full];
    for k in 1..=k_full {
        let p = k / factor;
        let rem = k % factor;
        for r in 0..n {
            out[(k - 1) * n + r] = if rem == 0 {
                at(p, r)
            } else if p == 0 {
                at(1, r)
            } else {
                let t = rem as f64 / factor as f64;
                (1.0 - t) * at(p, r) + t * at(p + 1, r)
            };
        }
    }
    Ok(out)
}
