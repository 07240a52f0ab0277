//! Set propagation through the surrogate and probabilistic flowpipes.
//!
//! Partitions of the initial box are pushed through the network with a
//! zonotope abstraction; each output zonotope is hulled into a box and glued
//! to its partition to form one part of the surrogate flowpipe. Inflating the
//! output dimensions by `r* / alpha_j` gives the confident flowpipe.

mod flowpipe;
mod propagate;
mod zonotope;

use serde::{Deserialize, Serialize};

pub use flowpipe::{Flowpipe, ProjectedInterval};
pub use propagate::{
    grid_flowpipe, output_bounds, propagate, surrogate_flowpipe, surrogate_flowpipe_with,
    ReachOptions,
};
pub use zonotope::Zonotope;

use crate::{Error, Result};

/// Axis-aligned box `[lower, upper]`, closed on both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct Hyperbox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for Hyperbox {
    type Error = Error;
    fn try_from(r: RawBox) -> Result<Self> {
        Hyperbox::new(r.lower, r.upper)
    }
}

impl Hyperbox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("box bounds", lower.len(), upper.len()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) {
                return Err(Error::invalid(format!("box bound {i} is not finite")));
            }
            if l > u {
                return Err(Error::invalid(format!(
                    "box dimension {i}: lower {l} > upper {u}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn point(x: &[f64]) -> Result<Self> {
        Self::new(x.to_vec(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn radius(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (u - l))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// `self` followed by `other` in a product space.
    pub fn concat(&self, other: &Hyperbox) -> Hyperbox {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        Hyperbox { lower, upper }
    }

    /// Componentwise intersection; `None` when empty.
    pub fn intersect(&self, other: &Hyperbox) -> Option<Hyperbox> {
        if self.dim() != other.dim() {
            return None;
        }
        let lower: Vec<f64> = self
            .lower
            .iter()
            .zip(&other.lower)
            .map(|(a, b)| a.max(*b))
            .collect();
        let upper: Vec<f64> = self
            .upper
            .iter()
            .zip(&other.upper)
            .map(|(a, b)| a.min(*b))
            .collect();
        Hyperbox::new(lower, upper).ok()
    }
}

/// Regular grid of `splits[i]` cells along dimension `i`, first dimension
/// varying slowest.
pub fn partition(init: &Hyperbox, splits: &[usize]) -> Result<Vec<Hyperbox>> {
    if splits.len() != init.dim() {
        return Err(Error::dim("partition splits", init.dim(), splits.len()));
    }
    if splits.contains(&0) {
        return Err(Error::invalid("every dimension needs at least one split"));
    }
    let edge = |d: usize, k: usize| {
        let s = splits[d];
        if k == s {
            init.upper[d]
        } else {
            init.lower[d] + (init.upper[d] - init.lower[d]) * k as f64 / s as f64
        }
    };
    let total: usize = splits.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; splits.len()];
    for _ in 0..total {
        let lower = (0..splits.len()).map(|d| edge(d, idx[d])).collect();
        let upper = (0..splits.len()).map(|d| edge(d, idx[d] + 1)).collect();
        out.push(Hyperbox::new(lower, upper)?);
        for d in (0..splits.len()).rev() {
            idx[d] += 1;
            if idx[d] < splits[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(out)
}
