use super::Hyperbox;
use crate::linalg::Matrix;
use crate::{Error, Result};

/// `{ c + sum_i mu_i g_i : mu_i in [-1, 1] }`.
///
/// The first `protected` generators are the input symbols of the initial box;
/// order reduction never merges them, so they can be reused to relate outputs
/// back to the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    center: Vec<f64>,
    generators: Vec<Vec<f64>>,
    protected: usize,
}

impl Zonotope {
    pub fn new(center: Vec<f64>, generators: Vec<Vec<f64>>) -> Result<Self> {
        let d = center.len();
        if let Some(g) = generators.iter().find(|g| g.len() != d) {
            return Err(Error::dim("zonotope generator", d, g.len()));
        }
        if center
            .iter()
            .chain(generators.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("zonotope entries must be finite"));
        }
        Ok(Self {
            center,
            generators,
            protected: 0,
        })
    }

    /// Box as a zonotope with one protected axis generator per dimension.
    pub fn from_box(b: &Hyperbox) -> Self {
        let d = b.dim();
        let generators = b
            .radius()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut g = vec![0.0; d];
                g[i] = *r;
                g
            })
            .collect();
        Self {
            center: b.center(),
            generators,
            protected: d,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn generators(&self) -> &[Vec<f64>] {
        &self.generators
    }

    pub fn protected(&self) -> usize {
        self.protected
    }

    /// Per-dimension `[c_i - sum |g_i|, c_i + sum |g_i|]`.
    pub fn interval_hull(&self) -> Hyperbox {
        let rad = self.radius();
        let lower = self.center.iter().zip(&rad).map(|(c, r)| c - r).collect();
        let upper = self.center.iter().zip(&rad).map(|(c, r)| c + r).collect();
        Hyperbox::new(lower, upper).expect("finite zonotope has a valid hull")
    }

    fn radius(&self) -> Vec<f64> {
        let mut rad = vec![0.0; self.dim()];
        for g in &self.generators {
            for (r, v) in rad.iter_mut().zip(g) {
                *r += v.abs();
            }
        }
        rad
    }

    /// Point for the given generator coefficients.
    pub fn point(&self, mu: &[f64]) -> Vec<f64> {
        let mut x = self.center.clone();
        for (g, m) in self.generators.iter().zip(mu) {
            for (xi, gi) in x.iter_mut().zip(g) {
                *xi += m * gi;
            }
        }
        x
    }

    /// Exact image under `x -> W x + b`.
    pub fn affine(&self, w: &Matrix, b: Option<&[f64]>) -> Result<Self> {
        if w.cols() != self.dim() {
            return Err(Error::dim("affine map input", w.cols(), self.dim()));
        }
        let mut center = w.mul_vec(&self.center);
        if let Some(b) = b {
            center.iter_mut().zip(b).for_each(|(c, bi)| *c += bi);
        }
        Ok(Self {
            center,
            generators: self.generators.iter().map(|g| w.mul_vec(g)).collect(),
            protected: self.protected,
        })
    }

    /// Stacks `self` (first) on top of `other`, sharing generator indices.
    ///
    /// Both sides must describe the same noise symbols in the same order for
    /// the result to keep their dependency; shorter generator lists are
    /// padded with zeros.
    pub fn stack(&self, other: &Zonotope) -> Zonotope {
        let p = self.generators.len().max(other.generators.len());
        let (d1, d2) = (self.dim(), other.dim());
        let generators = (0..p)
            .map(|i| {
                let mut g = self
                    .generators
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| vec![0.0; d1]);
                g.extend(
                    other
                        .generators
                        .get(i)
                        .cloned()
                        .unwrap_or_else(|| vec![0.0; d2]),
                );
                g
            })
            .collect();
        let mut center = self.center.clone();
        center.extend_from_slice(&other.center);
        Zonotope {
            center,
            generators,
            protected: self.protected.min(other.protected),
        }
    }

    /// Sound ReLU transformer given pre-activation bounds `[l, u]` per neuron.
    ///
    /// Stable neurons are exact; a crossing neuron is relaxed to
    /// `lambda x + mu` plus a fresh generator of size `mu`, with
    /// `lambda = u / (u - l)` and `mu = -lambda l / 2`.
    pub fn relu(&self, bounds: &Hyperbox) -> Result<Self> {
        if bounds.dim() != self.dim() {
            return Err(Error::dim("relu bounds", self.dim(), bounds.dim()));
        }
        let mut z = self.clone();
        for i in 0..self.dim() {
            let (l, u) = (bounds.lower()[i], bounds.upper()[i]);
            if l >= 0.0 {
                continue;
            }
            if u <= 0.0 {
                z.center[i] = 0.0;
                z.generators.iter_mut().for_each(|g| g[i] = 0.0);
                continue;
            }
            let lambda = u / (u - l);
            let mu = -lambda * l / 2.0;
            z.center[i] = lambda * z.center[i] + mu;
            z.generators.iter_mut().for_each(|g| g[i] *= lambda);
            let mut fresh = vec![0.0; self.dim()];
            fresh[i] = mu;
            z.generators.push(fresh);
        }
        Ok(z)
    }

    /// Merges the smallest unprotected generators into one axis-aligned
    /// generator per dimension so that at most `cap` remain.
    pub fn reduce_order(&mut self, cap: usize) {
        let d = self.dim();
        let keep_free = cap.saturating_sub(self.protected + d);
        let free = self.generators.len() - self.protected;
        if self.generators.len() <= cap || free <= keep_free {
            return;
        }
        let mut tail: Vec<Vec<f64>> = self.generators.split_off(self.protected);
        tail.sort_by(|a, b| norm1(b).total_cmp(&norm1(a)));
        let merged = tail.split_off(keep_free);
        let mut boxed = vec![0.0; d];
        for g in &merged {
            for (r, v) in boxed.iter_mut().zip(g) {
                *r += v.abs();
            }
        }
        self.generators.extend(tail);
        for (i, r) in boxed.into_iter().enumerate() {
            if r > 0.0 {
                let mut g = vec![0.0; d];
                g[i] = r;
                self.generators.push(g);
            }
        }
    }
}

fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}
