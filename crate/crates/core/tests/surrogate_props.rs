//! Network, loss and training properties of the surrogate.

use conformal_flowpipe::conformal::{dataset_residuals, empirical_quantile, scalars};
use conformal_flowpipe::dynamics::{sample_dataset, InitialSet, SystemModel};
use conformal_flowpipe::linalg::Matrix;
use conformal_flowpipe::surrogate::{
    batch_objective, build_interp_matrix, lipschitz_bound, loss, train, Layer, LossMode,
    ScalingFactors, SurrogateNet, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn lipschitz_bound_holds_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..10 {
        let n = rng.gen_range(1..=4);
        let mut sizes = vec![n];
        sizes.extend((0..rng.gen_range(1..=3)).map(|_| rng.gen_range(2..=20)));
        sizes.push(rng.gen_range(1..=10));
        let net = SurrogateNet::random(&sizes, &mut rng).unwrap();
        let bound = lipschitz_bound(&net);
        for _ in 0..1_000 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y: Vec<f64> = if rng.gen_bool(0.5) {
                x.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect()
            } else {
                (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()
            };
            let fx = net.forward(&x).unwrap();
            let fy = net.forward(&y).unwrap();
            let d_out = norm(&fx.iter().zip(&fy).map(|(a, b)| a - b).collect::<Vec<_>>());
            let d_in = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(
                d_out <= bound * d_in * (1.0 + 1e-9) + 1e-12,
                "{d_out} > {bound} * {d_in}"
            );
        }
    }
}

#[test]
fn forward_examples() {
    let one = |w: f64, b: f64| Layer::new(Matrix::from_rows(&[vec![w]]).unwrap(), vec![b]).unwrap();
    let net = SurrogateNet::new(vec![one(1.0, -2.0), one(3.0, 0.0)]).unwrap();
    assert_eq!(net.forward(&[1.0]).unwrap(), vec![0.0]);
    assert_eq!(net.forward(&[3.0]).unwrap(), vec![3.0]);
    assert_eq!(
        lipschitz_bound(&SurrogateNet::new(vec![one(2.0, 0.0), one(3.0, 1.0)]).unwrap()),
        6.0
    );
    assert!(net.forward(&[1.0, 2.0]).is_err());
}

#[test]
fn loss_examples() {
    assert!((loss::pinball(&[1.0, 2.0, 3.0, 4.0, 5.0], 4.0, 0.8) - 2.0).abs() < 1e-12);
    assert_eq!(loss::pinball(&[2.0, 2.0], 2.0, 0.3), 0.0);
    assert_eq!(loss::pinball(&[0.0, 10.0], 0.0, 0.5), 5.0);
    let a = ScalingFactors::new(vec![1.0, 2.0, 4.0]).unwrap();
    assert_eq!(loss::surface(2.0, &a), 3.5);
    assert_eq!(loss::surface(0.0, &a), 0.0);
    let doubled = ScalingFactors::new(vec![2.0, 4.0, 8.0]).unwrap();
    assert_eq!(loss::surface(2.0, &doubled), 1.75);
    assert!(loss::surface_checked(1.0, &[1.0, 0.0]).is_err());
    assert_eq!(loss::combined(2.0, 3.5, 100.0), 203.5);
    let ms = loss::mse_surface(
        1.0,
        &[vec![2.0, 1.0]],
        &ScalingFactors::new(vec![1.0, 2.0]).unwrap(),
    )
    .unwrap();
    assert_eq!(ms, 4.0);
    assert!(loss::mse_surface(1.0, &[], &a).is_err());
}

#[test]
fn pinball_minimiser_is_the_quantile() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let m = rng.gen_range(5..200);
        let r: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..5.0f64).powi(2)).collect();
        let db = rng.gen_range(0.05..0.95);
        let mut sorted = r.clone();
        sorted.sort_by(f64::total_cmp);
        let k = (db * m as f64).ceil() as usize; // 1-based
                                                 // the q-derivative sum_i -dL/dR_i is nondecreasing; bisect its sign change
        let slope = |q: f64| -> f64 { r.iter().map(|&ri| -loss::pinball_dr(ri, q, db)).sum() };
        let (mut a, mut b) = (sorted[0] - 1.0, sorted[m - 1] + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if slope(mid) < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let q = 0.5 * (a + b);
        let lo = sorted[k.saturating_sub(2)];
        let hi = sorted[k.min(m - 1)];
        assert!(
            q >= lo - 1e-6 && q <= hi + 1e-6,
            "q={q} not within [{lo}, {hi}]"
        );
        // the best data point is a neighbouring order statistic, and the
        // empirical quantile attains the minimum
        let best = sorted
            .iter()
            .copied()
            .min_by(|a, b| loss::pinball(&r, *a, db).total_cmp(&loss::pinball(&r, *b, db)))
            .unwrap();
        let emp = empirical_quantile(&r, db).unwrap();
        assert!(best >= lo && best <= hi);
        assert!(loss::pinball(&r, emp, db) <= loss::pinball(&r, best, db) + 1e-9);
    }
}

#[test]
fn surface_is_the_quantile_of_upper_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..100 {
        let nk = rng.gen_range(1..10);
        let alpha =
            ScalingFactors::new((0..nk).map(|_| rng.gen_range(0.1..10.0)).collect()).unwrap();
        let r: Vec<f64> = (0..rng.gen_range(1..300))
            .map(|_| rng.gen_range(0.0..3.0))
            .collect();
        let db = rng.gen_range(0.5..0.99);
        let q = empirical_quantile(&r, db).unwrap();
        let s = alpha.omega_sum();
        let ub: Vec<f64> = r.iter().map(|v| v * s).collect();
        assert_eq!(
            loss::surface(q, &alpha),
            empirical_quantile(&ub, db).unwrap()
        );
    }
}

#[test]
fn interp_matrix_reproduces_linear_trajectories() {
    let w = build_interp_matrix(2, 4, 1).unwrap();
    // row for step 3 blends steps 2 and 4
    assert_eq!(w.row(2), &[0.0, 0.5, 0.5]);
    let id = build_interp_matrix(6, 6, 2).unwrap();
    for i in 0..6 {
        assert_eq!(id.row(i)[2 + i], 1.0);
        assert_eq!(id.row(i).iter().sum::<f64>(), 1.0);
    }
    assert!(build_interp_matrix(3, 4, 1).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..50 {
        let n = rng.gen_range(1..=3);
        let factor = rng.gen_range(1..=4);
        let kt = rng.gen_range(1..=5);
        let w = build_interp_matrix(n * kt, n * kt * factor, n).unwrap();
        let s0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vel: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at = |k: usize| -> Vec<f64> { (0..n).map(|r| s0[r] + vel[r] * k as f64).collect() };
        let mut input = s0.clone();
        for p in 1..=kt {
            input.extend(at(p * factor));
        }
        let full = w.mul_vec(&input);
        for k in 1..=kt * factor {
            for r in 0..n {
                assert!((full[(k - 1) * n + r] - at(k)[r]).abs() < 1e-12);
            }
        }
    }
}

fn linear_system() -> (SystemModel, InitialSet) {
    let a = Matrix::from_rows(&[vec![0.9, -0.2], vec![0.2, 0.9]]).unwrap();
    (
        SystemModel::linear("rotation", a, vec![0.02 * 0.02; 2]),
        InitialSet::uniform(vec![-1.0, -1.0], vec![1.0, 1.0]),
    )
}

#[test]
fn trained_q_tracks_the_residual_quantile() {
    let (model, init) = linear_system();
    let data = sample_dataset(&model, &init, 5, 1_000, 1).unwrap();
    let config = TrainConfig {
        epochs: 200,
        batch_size: 100,
        c: 100.0,
        learning_rate: 5e-3,
        seed: 2,
        ..TrainConfig::default()
    };
    let res = train(&data, &config, &[2, 16, 10]).unwrap();
    let r = scalars(&dataset_residuals(&res.net, &res.alpha, &data).unwrap());
    let emp = empirical_quantile(&r, config.delta_bar).unwrap();
    assert!(
        (res.q - emp).abs() <= 0.1 * emp,
        "q = {}, empirical = {emp}",
        res.q
    );

    let again = train(&data, &config, &[2, 16, 10]).unwrap();
    assert_eq!(again.q, res.q);
    assert_eq!(again.alpha, res.alpha);
    assert_eq!(again.loss_history, res.loss_history);
}

#[test]
fn lipschitz_cap_is_enforced() {
    let (model, init) = linear_system();
    let data = sample_dataset(&model, &init, 3, 300, 3).unwrap();
    let config = TrainConfig {
        epochs: 10,
        batch_size: 50,
        lipschitz_cap: Some(1.0),
        seed: 4,
        ..TrainConfig::default()
    };
    let res = train(&data, &config, &[2, 16, 6]).unwrap();
    assert!(lipschitz_bound(&res.net) <= 1.0 + 1e-6);
}

/// Objective on a held-out batch before and after training. The initial
/// parameters are rebuilt the way training builds them: the seeded network,
/// `alpha = 1`, and `q` the mean of the per-trajectory max residual.
fn held_out_objectives(mode: LossMode, learning_rate: f64) -> (f64, f64) {
    let model = SystemModel::periodic2d();
    let init = InitialSet::uniform(vec![-0.5, -0.5], vec![0.5, 0.5]);
    let data = sample_dataset(&model, &init, 20, 2_000, 1).unwrap();
    let held = sample_dataset(&model, &init, 20, 500, 9).unwrap();
    let sizes = [2, 64, 64, 40];
    let config = TrainConfig {
        loss_mode: mode,
        c: 10.0,
        learning_rate,
        epochs: 20,
        batch_size: 64,
        seed: 2,
        ..TrainConfig::default()
    };
    let res = train(&data, &config, &sizes).unwrap();
    let x: Vec<&[f64]> = (0..held.len()).map(|i| held.initial_state(i)).collect();
    let y: Vec<&[f64]> = (0..held.len()).map(|i| held.tail(i)).collect();

    let net0 = SurrogateNet::random(&sizes, &mut ChaCha8Rng::seed_from_u64(config.seed)).unwrap();
    let q0 = x
        .iter()
        .zip(&y)
        .map(|(s, t)| {
            let p = net0.forward(s).unwrap();
            p.iter()
                .zip(t.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / x.len() as f64;
    let before = batch_objective(&net0, &vec![0.0; 40], q0, &x, &y, &config)
        .unwrap()
        .total;
    let log_alpha: Vec<f64> = res.alpha.as_slice().iter().map(|a| a.ln()).collect();
    let after = batch_objective(&res.net, &log_alpha, res.q, &x, &y, &config)
        .unwrap()
        .total;
    (before, after)
}

#[test]
fn training_lowers_the_held_out_objective() {
    for (mode, lr) in [
        (LossMode::Quantile, 2e-2),
        (LossMode::Mse, 2e-2),
        (LossMode::MseSurface, 1e-3),
    ] {
        let (before, after) = held_out_objectives(mode, lr);
        assert!(after <= before, "{mode:?}: {after} > {before}");
    }
}
