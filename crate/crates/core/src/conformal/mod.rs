//! Residuals, conformal and robust conformal quantiles, and shift estimates.

mod divergence;
mod quantile;
mod shift;

use std::io::{Read, Write};

pub use divergence::{
    adjusted_epsilon, adjusted_epsilon_numeric, g_numeric, g_numeric_inv, g_tv, g_tv_inv,
    min_calibration_size, min_calibration_size_strict, DivergenceGenerator, DivergenceKind,
    DivergenceSpec, KullbackLeibler, TotalVariation, BISECTION_MAX_STEPS, BISECTION_TOL,
    MAX_CALIBRATION_SIZE,
};
pub use quantile::{
    conformal_index, conformal_quantile, empirical_quantile, robust_quantile, QuantileValue,
    RobustQuantileResult,
};
pub use shift::{coverage_delta_tilde, estimate_shift_tv, DEFAULT_SHIFT_BINS};

use crate::dynamics::{Trajectory, TrajectoryDataset};
use crate::surrogate::{ScalingFactors, SurrogateNet};
use crate::{Error, Result};

/// Component-wise absolute prediction errors of one trajectory and their
/// scaled maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRecord {
    pub components: Vec<f64>,
    /// `max_j alpha_j * components[j]`.
    pub scalar: f64,
}

impl ResidualRecord {
    pub fn new(components: Vec<f64>, alpha: &ScalingFactors) -> Result<Self> {
        if components.len() != alpha.len() {
            return Err(Error::dim(
                "residual components",
                alpha.len(),
                components.len(),
            ));
        }
        if components.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::invalid("component residuals must be >= 0"));
        }
        let scalar = scaled_max(&components, alpha.as_slice());
        Ok(Self { components, scalar })
    }

    /// Rescores the record under different scaling factors.
    pub fn rescaled(&self, alpha: &ScalingFactors) -> Result<Self> {
        Self::new(self.components.clone(), alpha)
    }
}

fn scaled_max(components: &[f64], alpha: &[f64]) -> f64 {
    components
        .iter()
        .zip(alpha)
        .map(|(r, a)| a * r)
        .fold(0.0, f64::max)
}

/// Residuals of `trajectory` against the surrogate prediction from its initial state.
pub fn component_residuals(
    net: &SurrogateNet,
    alpha: &ScalingFactors,
    trajectory: &Trajectory,
) -> Result<ResidualRecord> {
    if trajectory.n() != net.input_dim() {
        return Err(Error::dim(
            "trajectory state dimension",
            net.input_dim(),
            trajectory.n(),
        ));
    }
    if trajectory.tail().len() != net.output_dim() {
        return Err(Error::dim(
            "trajectory tail",
            net.output_dim(),
            trajectory.tail().len(),
        ));
    }
    tail_residuals(net, alpha, trajectory.initial_state(), trajectory.tail())
}

fn tail_residuals(
    net: &SurrogateNet,
    alpha: &ScalingFactors,
    s0: &[f64],
    tail: &[f64],
) -> Result<ResidualRecord> {
    let pred = net.forward(s0)?;
    let components = pred.iter().zip(tail).map(|(p, y)| (y - p).abs()).collect();
    ResidualRecord::new(components, alpha)
}

/// [`component_residuals`] for every trajectory of a dataset.
pub fn dataset_residuals(
    net: &SurrogateNet,
    alpha: &ScalingFactors,
    data: &TrajectoryDataset,
) -> Result<Vec<ResidualRecord>> {
    if data.n != net.input_dim() {
        return Err(Error::dim(
            "dataset state dimension",
            net.input_dim(),
            data.n,
        ));
    }
    if data.tails.cols() != net.output_dim() {
        return Err(Error::dim(
            "dataset tail width",
            net.output_dim(),
            data.tails.cols(),
        ));
    }
    (0..data.len())
        .map(|i| tail_residuals(net, alpha, data.initial_state(i), data.tail(i)))
        .collect()
}

pub fn scalars(records: &[ResidualRecord]) -> Vec<f64> {
    records.iter().map(|r| r.scalar).collect()
}

/// CSV with header `scalar,R1,...,R<nK>` and one row per record.
pub fn write_residuals_csv<W: Write>(records: &[ResidualRecord], w: W) -> Result<()> {
    let width = records.first().map_or(0, |r| r.components.len());
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["scalar".to_string()];
    header.extend((1..=width).map(|j| format!("R{j}")));
    wr.write_record(&header)?;
    for r in records {
        if r.components.len() != width {
            return Err(Error::dim("residual row", width, r.components.len()));
        }
        let row: Vec<String> = std::iter::once(r.scalar)
            .chain(r.components.iter().copied())
            .map(|v| format!("{v:?}"))
            .collect();
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a residual CSV. Scalars are taken as stored; use
/// [`ResidualRecord::rescaled`] to recompute them under new factors.
pub fn read_residuals_csv<R: Read>(r: R) -> Result<Vec<ResidualRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let width = rd.headers()?.len();
    if width == 0 {
        return Err(Error::invalid("residual file has no columns"));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("residual row {i}: {e}")))?;
        if vals.len() != width {
            return Err(Error::dim("residual row", width, vals.len()));
        }
        if vals.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid(format!(
                "residual row {i} has a negative or NaN entry"
            )));
        }
        out.push(ResidualRecord {
            scalar: vals[0],
            components: vals[1..].to_vec(),
        });
    }
    Ok(out)
}
