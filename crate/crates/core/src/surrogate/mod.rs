//! Feedforward ReLU surrogate mapping an initial state to the predicted
//! trajectory tail, together with its losses and training loop.

mod interp;
mod lipschitz;
pub mod loss;
mod model_file;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use interp::{build_interp_matrix, interpolate_omega};
pub use lipschitz::{lipschitz_bound, POWER_ITERATIONS, POWER_REL_TOL};
pub use model_file::{ModelFile, ModelMetadata};
pub use train::{
    batch_objective, normalize_alpha, train, BatchObjective, EpochLoss, Gradient, LossMode,
    TrainConfig, TrainResult, ALPHA_FLOOR,
};

use crate::linalg::Matrix;
use crate::{Error, Result};

/// One affine layer `z = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::dim("layer bias", weights.rows(), bias.len()));
        }
        Ok(Self { weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.mul_vec(x);
        z.iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        z
    }
}

/// ReLU network: every layer but the last is followed by `max(0, ·)`.
///
/// An optional interpolation matrix is applied after the last layer. It acts
/// either on the network output alone (`cols == output width`) or on the
/// initial state stacked on top of the output (`cols == n + output width`),
/// which lets the first un-sampled time steps interpolate from `s_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateNet {
    layers: Vec<Layer>,
    interp: Option<Matrix>,
}

impl SurrogateNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::dim("layer chain", w[0].outputs(), w[1].inputs()));
            }
        }
        let net = Self {
            layers,
            interp: None,
        };
        if !net.is_finite() {
            return Err(Error::invalid("network parameters must be finite"));
        }
        Ok(net)
    }

    /// Fan-in scaled uniform initialisation, zero biases.
    pub fn random<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {layer_sizes:?}")));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Layer::new(
                    Matrix::from_row_major(fan_out, fan_in, data)?,
                    vec![0.0; fan_out],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn with_interp(mut self, w: Matrix) -> Result<Self> {
        let out = self.base_output_dim();
        let n = self.input_dim();
        if w.cols() != out && w.cols() != n + out {
            return Err(Error::dim(
                "interpolation matrix columns",
                n + out,
                w.cols(),
            ));
        }
        if !w.is_finite() {
            return Err(Error::invalid("interpolation matrix must be finite"));
        }
        self.interp = Some(w);
        Ok(self)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn interp(&self) -> Option<&Matrix> {
        self.interp.as_ref()
    }

    /// True when the interpolation matrix also reads the initial state.
    pub fn interp_reads_input(&self) -> bool {
        self.interp
            .as_ref()
            .is_some_and(|w| w.cols() == self.input_dim() + self.base_output_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Width of the last trained layer.
    pub fn base_output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    /// Width of [`forward`](Self::forward)'s result.
    pub fn output_dim(&self) -> usize {
        self.interp
            .as_ref()
            .map_or_else(|| self.base_output_dim(), Matrix::rows)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.input_dim()];
        v.extend(self.layers.iter().map(Layer::outputs));
        v
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
            && self.interp.as_ref().map_or(true, Matrix::is_finite)
    }

    /// Predicted trajectory tail for initial state `s0`.
    pub fn forward(&self, s0: &[f64]) -> Result<Vec<f64>> {
        if s0.len() != self.input_dim() {
            return Err(Error::dim("surrogate input", self.input_dim(), s0.len()));
        }
        let base = self.forward_base(s0);
        Ok(match &self.interp {
            None => base,
            Some(w) if w.cols() == base.len() => w.mul_vec(&base),
            Some(w) => {
                let mut x = s0.to_vec();
                x.extend_from_slice(&base);
                w.mul_vec(&x)
            }
        })
    }

    /// Output of the trained layers, before interpolation.
    pub(crate) fn forward_base(&self, s0: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut x = s0.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.apply(&x);
            if i < last {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        x
    }
}

/// Positive per-component scaling factors `alpha_j`; `omega_j = 1 / alpha_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScalingFactors(Vec<f64>);

impl ScalingFactors {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::invalid("scaling factors must be finite and > 0"));
        }
        Ok(Self(alpha))
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub fn from_omega(omega: &[f64]) -> Result<Self> {
        Self::new(omega.iter().map(|w| 1.0 / w).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn omega(&self) -> Vec<f64> {
        self.0.iter().map(|a| 1.0 / a).collect()
    }

    /// `sum_j 1 / alpha_j`.
    pub fn omega_sum(&self) -> f64 {
        self.0.iter().map(|a| 1.0 / a).sum()
    }
}

impl TryFrom<Vec<f64>> for ScalingFactors {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScalingFactors> for Vec<f64> {
    fn from(s: ScalingFactors) -> Self {
        s.0
    }
}
