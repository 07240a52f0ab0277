//! Analytic loss gradients against central finite differences.

use conformal_flowpipe::linalg::Matrix;
use conformal_flowpipe::surrogate::{
    batch_objective, Gradient, Layer, LossMode, SurrogateNet, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

#[derive(Clone)]
struct Params {
    layers: Vec<Layer>,
    log_alpha: Vec<f64>,
    q: f64,
}

struct Problem {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    config: TrainConfig,
}

impl Problem {
    fn total(&self, p: &Params) -> f64 {
        let net = SurrogateNet::new(p.layers.clone()).unwrap();
        let x: Vec<&[f64]> = self.inputs.iter().map(Vec::as_slice).collect();
        let y: Vec<&[f64]> = self.targets.iter().map(Vec::as_slice).collect();
        batch_objective(&net, &p.log_alpha, p.q, &x, &y, &self.config)
            .unwrap()
            .total
    }

    /// Every branch the objective takes: ReLU signs, arg-max component and
    /// pinball side of each sample. The objective is smooth while it is fixed.
    fn pattern(&self, p: &Params) -> Vec<i8> {
        let alpha: Vec<f64> = p.log_alpha.iter().map(|a| a.exp()).collect();
        let mut out = Vec::new();
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let mut h = x.clone();
            for (l, layer) in p.layers.iter().enumerate() {
                h = layer.apply(&h);
                if l + 1 < p.layers.len() {
                    out.extend(h.iter().map(|v| (*v > 0.0) as i8));
                    h.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            let mut best = (0usize, f64::NEG_INFINITY);
            for j in 0..h.len() {
                let e = h[j] - y[j];
                out.push((e > 0.0) as i8);
                let r = alpha[j] * e.abs();
                if r > best.1 {
                    best = (j, r);
                }
            }
            out.push(best.0 as i8);
            out.push((best.1 > p.q) as i8);
        }
        out
    }
}

fn random_layers(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Vec<Layer> {
    sizes
        .windows(2)
        .map(|w| {
            let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            Layer::new(Matrix::from_row_major(w[1], w[0], data).unwrap(), bias).unwrap()
        })
        .collect()
}

/// Visits every scalar parameter once with a mutable handle and the analytic
/// derivative for it.
fn for_each_param(p: &Params, grad: &Gradient, mut f: impl FnMut(&dyn Fn(&mut Params, f64), f64)) {
    for l in 0..p.layers.len() {
        for k in 0..p.layers[l].weights.as_slice().len() {
            f(
                &|q: &mut Params, d| q.layers[l].weights.as_mut_slice()[k] += d,
                grad.weights[l].as_slice()[k],
            );
        }
        for k in 0..p.layers[l].bias.len() {
            f(
                &|q: &mut Params, d| q.layers[l].bias[k] += d,
                grad.biases[l][k],
            );
        }
    }
    for j in 0..p.log_alpha.len() {
        f(&|q: &mut Params, d| q.log_alpha[j] += d, grad.log_alpha[j]);
    }
    f(&|q: &mut Params, d| q.q += d, grad.q);
}

struct Outcome {
    checked: usize,
    skipped: usize,
    worst: f64,
}

fn check(problem: &Problem, p: &Params) -> Outcome {
    let net = SurrogateNet::new(p.layers.clone()).unwrap();
    let x: Vec<&[f64]> = problem.inputs.iter().map(Vec::as_slice).collect();
    let y: Vec<&[f64]> = problem.targets.iter().map(Vec::as_slice).collect();
    let obj = batch_objective(&net, &p.log_alpha, p.q, &x, &y, &problem.config).unwrap();
    // rounding noise of a central difference is about eps * |f| / h
    let floor = 1e-9 * obj.total.abs().max(1.0);
    let mut out = Outcome {
        checked: 0,
        skipped: 0,
        worst: 0.0,
    };
    for_each_param(p, &obj.gradient, |perturb, analytic| {
        let mut plus = p.clone();
        perturb(&mut plus, STEP);
        let mut minus = p.clone();
        perturb(&mut minus, -STEP);
        if problem.pattern(&plus) != problem.pattern(&minus) {
            out.skipped += 1;
            return;
        }
        let numeric = (problem.total(&plus) - problem.total(&minus)) / (2.0 * STEP);
        let err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        let rel = if err <= floor { 0.0 } else { err / scale };
        out.worst = out.worst.max(rel);
        out.checked += 1;
    });
    out
}

/// Checks 20 random networks in `mode`; `Err` describes the first failure.
pub fn run_mode(mode: LossMode, c: f64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(match mode {
        LossMode::Quantile => 100 + c as u64,
        LossMode::Mse => 200,
        LossMode::MseSurface => 300,
    });
    let (mut checked, mut skipped) = (0, 0);
    for net_id in 0..20 {
        let n = rng.gen_range(1..=3);
        let nk = n * rng.gen_range(2..=4);
        let hidden: Vec<usize> = (0..rng.gen_range(1..=2))
            .map(|_| rng.gen_range(3..=8))
            .collect();
        let mut sizes = vec![n];
        sizes.extend(&hidden);
        sizes.push(nk);
        let batch = rng.gen_range(3..=8);
        let problem = Problem {
            inputs: (0..batch)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            targets: (0..batch)
                .map(|_| (0..nk).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect(),
            config: TrainConfig {
                loss_mode: mode,
                c,
                delta_bar: rng.gen_range(0.6..0.99),
                ..TrainConfig::default()
            },
        };
        let params = Params {
            layers: random_layers(&mut rng, &sizes),
            log_alpha: (0..nk).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            q: rng.gen_range(0.5..2.0),
        };
        let o = check(&problem, &params);
        if o.worst > REL_TOL {
            return Err(format!(
                "{mode:?} net {net_id} {sizes:?}: worst relative error {:e}",
                o.worst
            ));
        }
        checked += o.checked;
        skipped += o.skipped;
    }
    // a +-STEP perturbation rarely crosses a ReLU, arg-max or pinball kink
    if skipped * 50 > checked {
        return Err(format!(
            "{mode:?}: {skipped} of {} parameters straddle a kink",
            checked + skipped
        ));
    }
    Ok(())
}
