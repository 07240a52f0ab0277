//! Post-training tightening of the scaling factors.
//!
//! Minimising the inflation surface `sum_j omega_j` subject to
//! `R_i omega_j >= R_i^j` for every sample `i` and component `j` is a linear
//! program whose optimum is the column-wise maximum of `R_i^j / R_i`. The
//! constraints keep every rescored residual at or below its old value, so the
//! calibration quantile cannot grow.

use crate::conformal::ResidualRecord;
use crate::surrogate::{interpolate_omega, ScalingFactors, ALPHA_FLOOR};
use crate::{Error, Result};

/// Component residuals of a fresh dataset and their scalar residuals under
/// the current scaling factors.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementInput {
    pub components: Vec<Vec<f64>>,
    pub scalars: Vec<f64>,
}

impl RefinementInput {
    pub fn new(components: Vec<Vec<f64>>, scalars: Vec<f64>) -> Result<Self> {
        if components.len() != scalars.len() {
            return Err(Error::dim(
                "refinement rows",
                components.len(),
                scalars.len(),
            ));
        }
        let width = components.first().map_or(0, Vec::len);
        for row in &components {
            if row.len() != width {
                return Err(Error::dim("refinement row", width, row.len()));
            }
            if row.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::invalid(
                    "component residuals must be finite and >= 0",
                ));
            }
        }
        if scalars.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("scalar residuals must be finite and >= 0"));
        }
        Ok(Self {
            components,
            scalars,
        })
    }

    pub fn from_records(records: &[ResidualRecord]) -> Result<Self> {
        Self::new(
            records.iter().map(|r| r.components.clone()).collect(),
            records.iter().map(|r| r.scalar).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.scalars.len()
    }

    pub fn width(&self) -> usize {
        self.components.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    /// `omega'_j = max_i R_i^j / R_i`.
    pub omega: Vec<f64>,
    /// `1 / omega'` (rounded down by a few ulps), with zero columns floored
    /// like `normalize_alpha`.
    pub alpha: ScalingFactors,
    /// Rows skipped because their scalar residual is zero.
    pub dropped_rows: usize,
}

/// `1 / omega`, with `omega` first raised by three ulps: `fl(1/w) * R^j` then
/// never rounds above `R` for the row that attains `w = R^j / R`.
fn alpha_from_omega(omega: &[f64]) -> Result<ScalingFactors> {
    ScalingFactors::new(
        omega
            .iter()
            .map(|w| 1.0 / w.next_up().next_up().next_up().max(ALPHA_FLOOR))
            .collect(),
    )
}

pub fn refine_scaling(input: &RefinementInput) -> Result<Refinement> {
    if input.rows() == 0 {
        return Err(Error::invalid("refinement needs at least one residual row"));
    }
    let mut omega = vec![0.0f64; input.width()];
    let mut dropped = 0;
    for (row, &r) in input.components.iter().zip(&input.scalars) {
        if r == 0.0 {
            dropped += 1;
            continue;
        }
        for (w, c) in omega.iter_mut().zip(row) {
            *w = w.max(c / r);
        }
    }
    let alpha = alpha_from_omega(&omega)?;
    Ok(Refinement {
        omega,
        alpha,
        dropped_rows: dropped,
    })
}

/// Refines on the components at every `factor`-th step only and extends the
/// widths to the intermediate steps by linear interpolation.
pub fn refine_scaling_coarse(
    input: &RefinementInput,
    n: usize,
    factor: usize,
) -> Result<Refinement> {
    if factor == 0 || n == 0 || input.width() % (n * factor) != 0 {
        return Err(Error::invalid(format!(
            "width {} is not a whole number of {factor}-step blocks of n = {n}",
            input.width()
        )));
    }
    let keep: Vec<usize> = (0..input.width())
        .filter(|j| (j / n + 1) % factor == 0)
        .collect();
    let coarse = RefinementInput {
        components: input
            .components
            .iter()
            .map(|row| keep.iter().map(|&j| row[j]).collect())
            .collect(),
        scalars: input.scalars.clone(),
    };
    let r = refine_scaling(&coarse)?;
    let omega = interpolate_omega(&r.omega, n, factor)?;
    let alpha = alpha_from_omega(&omega)?;
    Ok(Refinement {
        omega,
        alpha,
        dropped_rows: r.dropped_rows,
    })
}
