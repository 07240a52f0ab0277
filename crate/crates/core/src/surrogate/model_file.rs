use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, LossMode, ScalingFactors, SurrogateNet};
use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub n: usize,
    #[serde(rename = "K")]
    pub horizon: usize,
    pub loss_mode: LossMode,
    pub seed: u64,
    /// Source tag of the dataset the weights were fitted on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained_on: Option<String>,
    /// Free-form history of post-training edits (alpha refinement, interpolation).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// On-disk surrogate: weights, scaling factors and quantile parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub layer_sizes: Vec<usize>,
    /// Row-major weights, one flat vector per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub alpha: ScalingFactors,
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interp_matrix: Option<Matrix>,
    pub metadata: ModelMetadata,
}

impl ModelFile {
    pub fn new(
        net: &SurrogateNet,
        alpha: ScalingFactors,
        q: f64,
        metadata: ModelMetadata,
    ) -> Result<Self> {
        if alpha.len() != net.output_dim() {
            return Err(Error::dim("scaling factors", net.output_dim(), alpha.len()));
        }
        Ok(Self {
            layer_sizes: net.layer_sizes(),
            weights: net
                .layers()
                .iter()
                .map(|l| l.weights.as_slice().to_vec())
                .collect(),
            biases: net.layers().iter().map(|l| l.bias.clone()).collect(),
            alpha,
            q,
            interp_matrix: net.interp().cloned(),
            metadata,
        })
    }

    pub fn network(&self) -> Result<SurrogateNet> {
        let s = &self.layer_sizes;
        if s.len() < 2 || self.weights.len() != s.len() - 1 || self.biases.len() != s.len() - 1 {
            return Err(Error::invalid(
                "model file: layer_sizes, weights and biases disagree",
            ));
        }
        let layers = s
            .windows(2)
            .zip(self.weights.iter().zip(&self.biases))
            .map(|(w, (wt, b))| {
                Layer::new(Matrix::from_row_major(w[1], w[0], wt.clone())?, b.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let net = SurrogateNet::new(layers)?;
        let net = match &self.interp_matrix {
            Some(w) => net.with_interp(w.clone())?,
            None => net,
        };
        if net.input_dim() != self.metadata.n {
            return Err(Error::dim(
                "model input width",
                self.metadata.n,
                net.input_dim(),
            ));
        }
        if net.output_dim() != self.metadata.n * self.metadata.horizon {
            return Err(Error::dim(
                "model output width",
                self.metadata.n * self.metadata.horizon,
                net.output_dim(),
            ));
        }
        if self.alpha.len() != net.output_dim() {
            return Err(Error::dim(
                "scaling factors",
                net.output_dim(),
                self.alpha.len(),
            ));
        }
        Ok(net)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        m.network()?;
        Ok(m)
    }
}
