//! Stochastic-gradient training of the surrogate.
//!
//! Trainable parameters are the network weights, the log scaling factors
//! `a_j` (`alpha_j = exp(a_j)`) and the quantile parameter `q`. The optimiser
//! is SGD with momentum; batches are drawn from a seeded permutation so a run
//! is reproducible from `TrainConfig::seed`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lipschitz_bound, loss, ScalingFactors, SurrogateNet, POWER_REL_TOL};
use crate::conformal::empirical_quantile;
use crate::dynamics::TrajectoryDataset;
use crate::linalg::{power_iteration, Matrix};
use crate::{Error, Result};

/// Lower bound on a column's maximum residual before inverting it into `alpha_j`.
pub const ALPHA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// `c * pinball + q * sum 1/alpha`, alpha and q trained jointly.
    Quantile,
    /// Plain MSE; alpha fixed afterwards by [`normalize_alpha`].
    Mse,
    /// MSE plus the batch-mean surface of the inflating box, alpha trained.
    MseSurface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    /// Target quantile level of the trajectory residuals.
    pub delta_bar: f64,
    /// Weight on the pinball term.
    pub c: f64,
    pub lipschitz_cap: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_mode: LossMode::Quantile,
            delta_bar: 0.95,
            c: 1e3,
            lipschitz_cap: None,
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-2,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if !(self.delta_bar > 0.0 && self.delta_bar < 1.0) {
            return Err(Error::invalid(format!(
                "delta_bar must be in (0,1), got {}",
                self.delta_bar
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid("c must be > 0"));
        }
        if let Some(cap) = self.lipschitz_cap {
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(Error::invalid("lipschitz_cap must be > 0"));
            }
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(Error::invalid(format!(
                "batch size {} must be in [1, {dataset_len}]",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0,1)"));
        }
        Ok(())
    }
}

/// Per-epoch means of the per-batch loss terms.
///
/// Quantile mode: `l1` pinball, `l2` surface. MSE modes: `l1` is the MSE and
/// `l2` the surface regulariser (zero for plain MSE).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub net: SurrogateNet,
    pub alpha: ScalingFactors,
    pub q: f64,
    pub loss_history: Vec<EpochLoss>,
    pub lipschitz_bound: f64,
}

/// Gradient of a batch objective with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub log_alpha: Vec<f64>,
    pub q: f64,
}

impl Gradient {
    fn zeros_like(net: &SurrogateNet, nk: usize) -> Self {
        Self {
            weights: net
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.outputs(), l.inputs()))
                .collect(),
            biases: net
                .layers()
                .iter()
                .map(|l| vec![0.0; l.outputs()])
                .collect(),
            log_alpha: vec![0.0; nk],
            q: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub gradient: Gradient,
}

/// Post-activation values of every layer for one input.
fn forward_cached(net: &SurrogateNet, x: &[f64]) -> Vec<Vec<f64>> {
    let last = net.layers().len() - 1;
    let mut acts = Vec::with_capacity(net.layers().len() + 1);
    acts.push(x.to_vec());
    for (i, layer) in net.layers().iter().enumerate() {
        let mut z = layer.apply(acts.last().unwrap());
        if i < last {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(z);
    }
    acts
}

/// Accumulates parameter gradients given `d objective / d output`.
fn backward(net: &SurrogateNet, acts: &[Vec<f64>], dout: Vec<f64>, grad: &mut Gradient) {
    let mut delta = dout;
    for l in (0..net.layers().len()).rev() {
        let input = &acts[l];
        let gw = &mut grad.weights[l];
        for (i, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.biases[l][i] += d;
            let row = &mut gw.as_mut_slice()[i * input.len()..(i + 1) * input.len()];
            for (g, &a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
        }
        if l > 0 {
            let mut prev = net.layers()[l].weights.tmul_vec(&delta);
            // acts[l] is post-ReLU of layer l-1
            for (p, &a) in prev.iter_mut().zip(&acts[l]) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

/// Loss value and gradient on one batch of `(initial state, tail)` pairs.
///
/// `log_alpha` and `q` are ignored in [`LossMode::Mse`] (their gradients are zero).
pub fn batch_objective(
    net: &SurrogateNet,
    log_alpha: &[f64],
    q: f64,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    config: &TrainConfig,
) -> Result<BatchObjective> {
    let m = inputs.len();
    if m == 0 || targets.len() != m {
        return Err(Error::invalid(
            "batch must be non-empty with one target per input",
        ));
    }
    let nk = net.base_output_dim();
    if log_alpha.len() != nk {
        return Err(Error::dim("log scaling factors", nk, log_alpha.len()));
    }
    let alpha: Vec<f64> = log_alpha.iter().map(|a| a.exp()).collect();
    let omega_sum: f64 = alpha.iter().map(|a| 1.0 / a).sum();
    let mut grad = Gradient::zeros_like(net, nk);
    let (mut l1, mut l2) = (0.0, 0.0);
    let mf = m as f64;

    for (x, y) in inputs.iter().zip(targets) {
        if y.len() != nk {
            return Err(Error::dim("training target", nk, y.len()));
        }
        let acts = forward_cached(net, x);
        let pred = acts.last().unwrap();
        let mut dout = vec![0.0; nk];
        match config.loss_mode {
            LossMode::Quantile => {
                let (jstar, r) = scaled_max(pred, y, &alpha);
                l1 += config.delta_bar * (r - q).max(0.0)
                    + (1.0 - config.delta_bar) * (q - r).max(0.0);
                let psi = config.c * loss::pinball_dr(r, q, config.delta_bar);
                if psi != 0.0 {
                    if let Some(j) = jstar {
                        dout[j] = psi * alpha[j] * (pred[j] - y[j]).signum();
                        grad.log_alpha[j] += psi * r;
                    }
                    grad.q -= psi;
                }
            }
            LossMode::Mse => {
                let scale = 2.0 / (mf * nk as f64);
                for j in 0..nk {
                    let e = pred[j] - y[j];
                    l1 += e * e / (mf * nk as f64);
                    dout[j] = scale * e;
                }
            }
            LossMode::MseSurface => {
                let scale = 2.0 / (mf * nk as f64);
                for j in 0..nk {
                    let e = pred[j] - y[j];
                    l1 += e * e / (mf * nk as f64);
                    dout[j] = scale * e;
                }
                let (jstar, s) = scaled_max(pred, y, &alpha);
                l2 += s * omega_sum / mf;
                if let Some(j) = jstar {
                    dout[j] += omega_sum / mf * alpha[j] * (pred[j] - y[j]).signum();
                    grad.log_alpha[j] += omega_sum / mf * s;
                }
                for (g, a) in grad.log_alpha.iter_mut().zip(&alpha) {
                    *g -= s / mf / a;
                }
            }
        }
        backward(net, &acts, dout, &mut grad);
    }

    let total = match config.loss_mode {
        LossMode::Quantile => {
            l2 = q * omega_sum;
            grad.q += omega_sum;
            for (g, a) in grad.log_alpha.iter_mut().zip(&alpha) {
                *g -= q / a;
            }
            loss::combined(l1, l2, config.c)
        }
        LossMode::Mse => l1,
        LossMode::MseSurface => l1 + l2,
    };
    Ok(BatchObjective {
        l1,
        l2,
        total,
        gradient: grad,
    })
}

/// `(argmax_j, max_j alpha_j |pred_j - y_j|)`; the index is `None` when every
/// scaled residual is zero.
fn scaled_max(pred: &[f64], y: &[f64], alpha: &[f64]) -> (Option<usize>, f64) {
    let mut best = (None, 0.0);
    for j in 0..pred.len() {
        let r = alpha[j] * (pred[j] - y[j]).abs();
        if r > best.1 {
            best = (Some(j), r);
        }
    }
    best
}

/// `alpha_j = 1 / max_i R_i^j` over the dataset, with the maximum floored at
/// [`ALPHA_FLOOR`].
pub fn normalize_alpha(net: &SurrogateNet, dataset: &TrajectoryDataset) -> Result<ScalingFactors> {
    if dataset.is_empty() {
        return Err(Error::invalid("normalize_alpha needs a non-empty dataset"));
    }
    let nk = net.output_dim();
    if dataset.tails.cols() != nk {
        return Err(Error::dim("dataset tail width", nk, dataset.tails.cols()));
    }
    let mut col_max = vec![0.0f64; nk];
    for i in 0..dataset.len() {
        let pred = net.forward(dataset.initial_state(i))?;
        for ((m, p), y) in col_max.iter_mut().zip(&pred).zip(dataset.tail(i)) {
            *m = m.max((p - y).abs());
        }
    }
    ScalingFactors::new(col_max.iter().map(|m| 1.0 / m.max(ALPHA_FLOOR)).collect())
}

/// Trains a surrogate with architecture `layer_sizes` on `dataset`.
pub fn train(
    dataset: &TrajectoryDataset,
    config: &TrainConfig,
    layer_sizes: &[usize],
) -> Result<TrainResult> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    config.validate(dataset.len())?;
    let n = dataset.n;
    let nk = dataset.tails.cols();
    if layer_sizes.first() != Some(&n) {
        return Err(Error::dim(
            "network input width",
            n,
            layer_sizes.first().copied().unwrap_or(0),
        ));
    }
    if layer_sizes.last() != Some(&nk) {
        return Err(Error::dim(
            "network output width",
            nk,
            layer_sizes.last().copied().unwrap_or(0),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = SurrogateNet::random(layer_sizes, &mut rng)?;
    let mut log_alpha = vec![0.0; nk];
    let mut q = f64::NAN;
    let trains_alpha = config.loss_mode != LossMode::Mse;
    let trains_q = config.loss_mode == LossMode::Quantile;

    let mut vel_w: Vec<Matrix> = net
        .layers()
        .iter()
        .map(|l| Matrix::zeros(l.outputs(), l.inputs()))
        .collect();
    let mut vel_b: Vec<Vec<f64>> = net
        .layers()
        .iter()
        .map(|l| vec![0.0; l.outputs()])
        .collect();
    let mut vel_a = vec![0.0; nk];
    let mut vel_q = 0.0;
    let mut power_vecs: Vec<Vec<f64>> = vec![Vec::new(); net.layers().len()];

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = EpochLoss {
            l1: 0.0,
            l2: 0.0,
            total: 0.0,
        };
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| dataset.initial_state(i)).collect();
            let targets: Vec<&[f64]> = chunk.iter().map(|&i| dataset.tail(i)).collect();
            if q.is_nan() {
                // first batch, alpha = 1
                q = inputs
                    .iter()
                    .zip(&targets)
                    .map(|(x, y)| {
                        let p = net.forward_base(x);
                        p.iter()
                            .zip(y.iter())
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max)
                    })
                    .sum::<f64>()
                    / inputs.len() as f64;
            }
            let obj = batch_objective(&net, &log_alpha, q, &inputs, &targets, config)?;
            if !obj.total.is_finite() {
                return Err(Error::Divergent { epoch });
            }
            sums.l1 += obj.l1;
            sums.l2 += obj.l2;
            sums.total += obj.total;
            batches += 1;

            // the quantile objective is a sum over the batch weighted by c;
            // normalising by c*M only rescales the step, not the minimiser
            let scale = match config.loss_mode {
                LossMode::Quantile => 1.0 / (config.c * chunk.len() as f64),
                _ => 1.0,
            };
            let (lr, mu) = (config.learning_rate, config.momentum);
            let g = obj.gradient;
            for (l, layer) in net.layers_mut().iter_mut().enumerate() {
                for ((w, v), gw) in layer
                    .weights
                    .as_mut_slice()
                    .iter_mut()
                    .zip(vel_w[l].as_mut_slice())
                    .zip(g.weights[l].as_slice())
                {
                    *v = mu * *v + scale * gw;
                    *w -= lr * *v;
                }
                for ((b, v), gb) in layer.bias.iter_mut().zip(&mut vel_b[l]).zip(&g.biases[l]) {
                    *v = mu * *v + scale * gb;
                    *b -= lr * *v;
                }
            }
            if trains_alpha {
                for ((a, v), ga) in log_alpha.iter_mut().zip(&mut vel_a).zip(&g.log_alpha) {
                    *v = mu * *v + scale * ga;
                    *a -= lr * *v;
                }
            }
            if trains_q {
                vel_q = mu * vel_q + scale * g.q;
                q -= lr * vel_q;
            }
            if let Some(cap) = config.lipschitz_cap {
                project_lipschitz(&mut net, cap, &mut power_vecs);
            }
        }
        let b = batches.max(1) as f64;
        let mean = EpochLoss {
            l1: sums.l1 / b,
            l2: sums.l2 / b,
            total: sums.total / b,
        };
        if !(mean.total.is_finite() && net.is_finite() && log_alpha.iter().all(|a| a.is_finite())) {
            return Err(Error::Divergent { epoch });
        }
        history.push(mean);
    }

    if let Some(cap) = config.lipschitz_cap {
        let bound = lipschitz_bound(&net);
        if bound > cap {
            rescale_layers(&mut net, cap / bound);
        }
    }

    let alpha = match config.loss_mode {
        LossMode::Mse => normalize_alpha(&net, dataset)?,
        _ => ScalingFactors::new(log_alpha.iter().map(|a| a.exp()).collect())?,
    };
    if config.loss_mode != LossMode::Quantile {
        let residuals: Vec<f64> = (0..dataset.len())
            .map(|i| {
                let p = net.forward_base(dataset.initial_state(i));
                scaled_max(&p, dataset.tail(i), alpha.as_slice()).1
            })
            .collect();
        q = empirical_quantile(&residuals, config.delta_bar)?;
    }
    let lipschitz_bound = lipschitz_bound(&net);
    Ok(TrainResult {
        net,
        alpha,
        q,
        loss_history: history,
        lipschitz_bound,
    })
}

/// Spreads a total rescale `ratio` geometrically over the layers.
fn rescale_layers(net: &mut SurrogateNet, ratio: f64) {
    let depth = net.layers().len() as f64;
    let per_layer = ratio.powf(1.0 / depth);
    for layer in net.layers_mut() {
        layer.weights.scale(per_layer);
    }
}

fn project_lipschitz(net: &mut SurrogateNet, cap: f64, power_vecs: &mut [Vec<f64>]) {
    let bound: f64 = net
        .layers()
        .iter()
        .zip(power_vecs.iter_mut())
        .map(|(l, v)| power_iteration(&l.weights, v, super::POWER_ITERATIONS, POWER_REL_TOL))
        .product();
    if bound > cap {
        rescale_layers(net, cap / bound);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{sample_dataset, InitialSet, SystemModel};

    fn linear_dataset(count: usize, seed: u64) -> TrajectoryDataset {
        let a = Matrix::from_rows(&[vec![0.9, 0.2], vec![-0.2, 0.9]]).unwrap();
        let m = SystemModel::linear("rot", a, vec![0.02f64.powi(2); 2]);
        let init = InitialSet::uniform(vec![-1.0, -1.0], vec![1.0, 1.0]);
        sample_dataset(&m, &init, 3, count, seed).unwrap()
    }

    fn quick(mode: LossMode) -> TrainConfig {
        TrainConfig {
            loss_mode: mode,
            delta_bar: 0.9,
            c: 100.0,
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_same_result() {
        let d = linear_dataset(200, 1);
        let cfg = quick(LossMode::Quantile);
        let a = train(&d, &cfg, &[2, 8, 6]).unwrap();
        let b = train(&d, &cfg, &[2, 8, 6]).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.q, b.q);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn architecture_must_match_dataset() {
        let d = linear_dataset(50, 1);
        assert!(train(&d, &quick(LossMode::Mse), &[3, 8, 6]).is_err());
        assert!(train(&d, &quick(LossMode::Mse), &[2, 8, 5]).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        let d = linear_dataset(50, 1);
        let mut cfg = quick(LossMode::Quantile);
        cfg.delta_bar = 1.0;
        assert!(train(&d, &cfg, &[2, 4, 6]).is_err());
        let mut cfg = quick(LossMode::Quantile);
        cfg.batch_size = 51;
        assert!(train(&d, &cfg, &[2, 4, 6]).is_err());
    }

    #[test]
    fn lipschitz_cap_enforced() {
        let d = linear_dataset(200, 2);
        let mut cfg = quick(LossMode::Mse);
        cfg.lipschitz_cap = Some(1.0);
        let r = train(&d, &cfg, &[2, 16, 6]).unwrap();
        assert!(r.lipschitz_bound <= 1.0 + 1e-6, "{}", r.lipschitz_bound);
        assert!(lipschitz_bound(&r.net) <= 1.0 + 1e-6);
    }

    #[test]
    fn divergence_is_reported() {
        let d = linear_dataset(64, 2);
        let mut cfg = quick(LossMode::Mse);
        cfg.learning_rate = 1e12;
        match train(&d, &cfg, &[2, 16, 6]) {
            Err(Error::Divergent { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|r| r.q)),
        }
    }

    #[test]
    fn mse_mode_uses_normalized_alpha() {
        let d = linear_dataset(100, 4);
        let r = train(&d, &quick(LossMode::Mse), &[2, 8, 6]).unwrap();
        assert_eq!(r.alpha, normalize_alpha(&r.net, &d).unwrap());
    }

    #[test]
    fn normalize_alpha_inverts_column_maxima() {
        // identity net on a 1-step, n = 2 dataset with residual maxima (2, 0.5)
        let net = SurrogateNet::new(vec![crate::surrogate::Layer::new(
            Matrix::identity(2),
            vec![0.0; 2],
        )
        .unwrap()])
        .unwrap();
        let d = TrajectoryDataset {
            n: 2,
            horizon: 1,
            seed: 0,
            source: "test".into(),
            initial_states: Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap(),
            tails: Matrix::from_rows(&[vec![2.0, 0.25], vec![0.0, 1.5]]).unwrap(),
            noise: None,
        };
        assert_eq!(normalize_alpha(&net, &d).unwrap().as_slice(), &[0.5, 2.0]);

        let exact = TrajectoryDataset {
            tails: d.initial_states.clone(),
            ..d.clone()
        };
        assert_eq!(
            normalize_alpha(&net, &exact).unwrap().as_slice(),
            &[1e12, 1e12]
        );

        let single = TrajectoryDataset {
            initial_states: Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap(),
            tails: Matrix::from_rows(&[vec![0.25, -4.0]]).unwrap(),
            ..d
        };
        assert_eq!(
            normalize_alpha(&net, &single).unwrap().as_slice(),
            &[4.0, 0.25]
        );
    }
}
