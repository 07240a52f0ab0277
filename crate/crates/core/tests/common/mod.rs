//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

pub mod gradcheck;
pub mod refine_oracle;

/// Dense simplex for `min c.x` subject to `A x >= b`, `x >= 0`, with `c >= 0`
/// and `b >= 0`.
///
/// Solves the dual `max b.y` s.t. `A^T y <= c`, `y >= 0`, whose slack basis is
/// feasible because `c >= 0`, using Bland's rule. The primal optimum is read
/// off the objective row under the dual slack columns.
pub fn lp_min_cover(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Vec<f64> {
    let rows = c.len(); // dual constraints
    let ycols = a.len(); // dual variables
    let width = ycols + rows + 1;
    let mut t = vec![vec![0.0; width]; rows + 1];
    for j in 0..rows {
        for (i, row) in a.iter().enumerate() {
            t[j][i] = row[j];
        }
        t[j][ycols + j] = 1.0;
        t[j][width - 1] = c[j];
    }
    for i in 0..ycols {
        t[rows][i] = -b[i];
    }
    let eps = 1e-12;
    loop {
        let Some(enter) = (0..width - 1).find(|&k| t[rows][k] < -eps) else {
            break;
        };
        let mut leave = None;
        let mut best = f64::INFINITY;
        for r in 0..rows {
            if t[r][enter] > eps {
                let ratio = t[r][width - 1] / t[r][enter];
                if ratio < best - 1e-15 {
                    best = ratio;
                    leave = Some(r);
                }
            }
        }
        let r = leave.expect("dual is unbounded");
        let p = t[r][enter];
        t[r].iter_mut().for_each(|v| *v /= p);
        let pivot = t[r].clone();
        for (k, row) in t.iter_mut().enumerate() {
            if k != r {
                let f = row[enter];
                if f != 0.0 {
                    row.iter_mut().zip(&pivot).for_each(|(v, pv)| *v -= f * pv);
                }
            }
        }
    }
    (0..rows).map(|j| t[rows][ycols + j]).collect()
}

/// `ceil((m + 1) * (den - num) / den)` in integers, for `epsilon = num / den`.
pub fn conformal_rank(m: usize, num: u64, den: u64) -> u64 {
    let top = (m as u64 + 1) * (den - num);
    top.div_ceil(den)
}

/// Sort-and-index quantile: `None` stands for `+inf`.
pub fn sorted_quantile(values: &[f64], rank: u64) -> Option<f64> {
    if rank as usize > values.len() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(v[rank as usize - 1])
}

use conformal_flowpipe::conformal::ResidualRecord;
use conformal_flowpipe::dynamics::TrajectoryDataset;
use conformal_flowpipe::reach::Flowpipe;
use conformal_flowpipe::surrogate::{ScalingFactors, SurrogateNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of uniform draws `s0` from `[lower, upper]` whose `[s0, forward(s0)]`
/// lies outside `fp`.
pub fn surrogate_misses(
    net: &SurrogateNet,
    fp: &Flowpipe,
    lower: &[f64],
    upper: &[f64],
    count: usize,
    seed: u64,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut misses = 0;
    for _ in 0..count {
        let s0: Vec<f64> = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| rng.gen_range(*l..=*u))
            .collect();
        let mut v = s0.clone();
        v.extend(net.forward(&s0).unwrap());
        if !fp.contains_values(&v).unwrap() {
            misses += 1;
        }
    }
    misses
}

/// Per-trajectory check of "residual within `r_star` and prediction covered
/// by the surrogate flowpipe imply trajectory covered by the inflated one".
/// Returns `(antecedent holds, implication violated)` counts.
pub fn chain_counts(
    net: &SurrogateNet,
    alpha: &ScalingFactors,
    r_star: f64,
    surrogate: &Flowpipe,
    inflated: &Flowpipe,
    data: &TrajectoryDataset,
) -> (usize, usize) {
    let (mut held, mut broken) = (0, 0);
    for i in 0..data.len() {
        let s0 = data.initial_state(i);
        let pred = net.forward(s0).unwrap();
        let comps = pred
            .iter()
            .zip(data.tail(i))
            .map(|(p, y)| (y - p).abs())
            .collect();
        let rec = ResidualRecord::new(comps, alpha).unwrap();
        let mut pv = s0.to_vec();
        pv.extend(pred);
        if rec.scalar <= r_star && surrogate.contains_values(&pv).unwrap() {
            held += 1;
            if !inflated.contains(&data.trajectory(i)).unwrap() {
                broken += 1;
            }
        }
    }
    (held, broken)
}
