use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Hyperbox;
use crate::conformal::QuantileValue;
use crate::dynamics::Trajectory;
use crate::surrogate::ScalingFactors;
use crate::{Error, Result};

/// Union of boxes in trajectory space `R^{n(K+1)}`, one per partition of
/// the initial set. The first `n` coordinates of each part are its
/// partition box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flowpipe {
    n: usize,
    #[serde(rename = "K")]
    horizon: usize,
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default)]
    tau: Option<f64>,
    inflated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<f64>>,
    parts: Vec<Hyperbox>,
}

/// Interval of one state component at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedInterval {
    pub step: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Flowpipe {
    pub fn new(n: usize, horizon: usize, parts: Vec<Hyperbox>) -> Result<Self> {
        let fp = Self {
            n,
            horizon,
            delta: None,
            tau: None,
            inflated: false,
            r_star: None,
            alpha: None,
            parts,
        };
        fp.validate()?;
        Ok(fp)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.horizon == 0 {
            return Err(Error::invalid("flowpipe needs n >= 1 and K >= 1"));
        }
        let d = self.n * (self.horizon + 1);
        if let Some(p) = self.parts.iter().find(|p| p.dim() != d) {
            return Err(Error::dim("flowpipe part", d, p.dim()));
        }
        if let Some(a) = &self.alpha {
            if a.len() != self.n * self.horizon {
                return Err(Error::dim("flowpipe alpha", self.n * self.horizon, a.len()));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn parts(&self) -> &[Hyperbox] {
        &self.parts
    }

    pub fn is_inflated(&self) -> bool {
        self.inflated
    }

    pub fn r_star(&self) -> Option<f64> {
        self.r_star
    }

    pub fn alpha(&self) -> Option<&[f64]> {
        self.alpha.as_deref()
    }

    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    /// Records the confidence target and shift radius this pipe is meant for.
    pub fn with_guarantee(mut self, delta: f64, tau: f64) -> Self {
        self.delta = Some(delta);
        self.tau = Some(tau);
        self
    }

    /// Widens every output dimension `j` by `r* / alpha_j` on both sides,
    /// leaving the initial-state dimensions untouched.
    ///
    /// The width is raised by four ulps to absorb the rounding of the residual,
    /// of `alpha_j * R^j` and of the division, and the bounds are rounded
    /// outward.
    pub fn inflate(&self, r_star: QuantileValue, alpha: &ScalingFactors) -> Result<Flowpipe> {
        if self.inflated {
            return Err(Error::invalid("flowpipe is already inflated"));
        }
        let r = r_star.require_finite()?;
        if !(r >= 0.0) {
            return Err(Error::invalid(format!("r_star must be >= 0, got {r}")));
        }
        let nk = self.n * self.horizon;
        if alpha.len() != nk {
            return Err(Error::dim("scaling factors", nk, alpha.len()));
        }
        let widths: Vec<f64> = alpha
            .as_slice()
            .iter()
            .map(|a| {
                if r > 0.0 {
                    (r / a).next_up().next_up().next_up().next_up()
                } else {
                    0.0
                }
            })
            .collect();
        if widths.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("inflation width overflowed"));
        }
        let parts = self
            .parts
            .iter()
            .map(|p| {
                let mut lower = p.lower().to_vec();
                let mut upper = p.upper().to_vec();
                for (j, e) in widths.iter().enumerate() {
                    if *e > 0.0 {
                        lower[self.n + j] = (lower[self.n + j] - e).next_down();
                        upper[self.n + j] = (upper[self.n + j] + e).next_up();
                    }
                }
                Hyperbox::new(lower, upper)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Flowpipe {
            n: self.n,
            horizon: self.horizon,
            delta: self.delta,
            tau: self.tau,
            inflated: true,
            r_star: Some(r),
            alpha: Some(alpha.as_slice().to_vec()),
            parts,
        })
    }

    /// True when some part contains the flattened point (closed intervals).
    pub fn contains_values(&self, values: &[f64]) -> Result<bool> {
        let d = self.n * (self.horizon + 1);
        if values.len() != d {
            return Err(Error::dim("trajectory length", d, values.len()));
        }
        Ok(self.parts.iter().any(|p| p.contains(values)))
    }

    pub fn contains(&self, traj: &Trajectory) -> Result<bool> {
        if traj.n() != self.n {
            return Err(Error::dim("trajectory state dimension", self.n, traj.n()));
        }
        self.contains_values(traj.values())
    }

    /// Per-step hull over all parts of state component `dim`.
    pub fn project(
        &self,
        dim: usize,
        steps: RangeInclusive<usize>,
    ) -> Result<Vec<ProjectedInterval>> {
        if dim >= self.n {
            return Err(Error::invalid(format!(
                "component {dim} out of range for n = {}",
                self.n
            )));
        }
        if *steps.end() > self.horizon || steps.start() > steps.end() {
            return Err(Error::invalid(format!(
                "steps {steps:?} outside 0..={}",
                self.horizon
            )));
        }
        if self.parts.is_empty() {
            return Err(Error::invalid("flowpipe has no parts"));
        }
        Ok(steps
            .map(|k| {
                let c = k * self.n + dim;
                let lower = self
                    .parts
                    .iter()
                    .map(|p| p.lower()[c])
                    .fold(f64::INFINITY, f64::min);
                let upper = self
                    .parts
                    .iter()
                    .map(|p| p.upper()[c])
                    .fold(f64::NEG_INFINITY, f64::max);
                ProjectedInterval {
                    step: k,
                    lower,
                    upper,
                }
            })
            .collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let fp: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        fp.validate()?;
        Ok(fp)
    }
}
