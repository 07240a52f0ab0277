//! Scaling-factor refinement checked against [`super::lp_min_cover`].

use conformal_flowpipe::conformal::{conformal_quantile, ResidualRecord};
use conformal_flowpipe::refine::{refine_scaling, RefinementInput};
use conformal_flowpipe::surrogate::ScalingFactors;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_records(
    rng: &mut ChaCha8Rng,
    rows: usize,
    width: usize,
) -> (Vec<ResidualRecord>, ScalingFactors) {
    let alpha = ScalingFactors::new((0..width).map(|_| rng.gen_range(0.2..5.0)).collect()).unwrap();
    let records = (0..rows)
        .map(|_| {
            let comps = (0..width)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        0.0
                    } else {
                        rng.gen_range(0.0..3.0)
                    }
                })
                .collect();
            ResidualRecord::new(comps, &alpha).unwrap()
        })
        .collect();
    (records, alpha)
}

/// `min sum w` s.t. `R_i w_j >= R_i^j`, written as a general `A w >= b`.
pub fn oracle(records: &[ResidualRecord]) -> Vec<f64> {
    let width = records[0].components.len();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for r in records {
        for j in 0..width {
            let mut row = vec![0.0; width];
            row[j] = r.scalar;
            a.push(row);
            b.push(r.components[j]);
        }
    }
    super::lp_min_cover(&a, &b, &vec![1.0; width])
}

/// Compares 100 random refinements with the generic LP and checks that the
/// conformal quantile never rises.
pub fn check_instances(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for instance in 0..100 {
        let rows = rng.gen_range(1..=50);
        let width = rng.gen_range(1..=12);
        let (records, alpha) = random_records(&mut rng, rows, width);
        let refined = refine_scaling(&RefinementInput::from_records(&records).unwrap()).unwrap();
        let expected = oracle(&records);
        for (j, (got, want)) in refined.omega.iter().zip(&expected).enumerate() {
            if (got - want).abs() > 1e-9 * want.abs().max(1.0) {
                return Err(format!("instance {instance}, column {j}: {got} vs {want}"));
            }
        }
        let before: Vec<f64> = records.iter().map(|r| r.scalar).collect();
        let after: Vec<f64> = records
            .iter()
            .map(|r| r.rescaled(&refined.alpha).unwrap().scalar)
            .collect();
        for eps in [0.05, 0.2, 0.5] {
            if conformal_quantile(&after, eps).unwrap() > conformal_quantile(&before, eps).unwrap()
            {
                return Err(format!("instance {instance}: quantile at {eps} rose"));
            }
        }
        // the trained factors are themselves feasible
        if refined.omega.iter().sum::<f64>() > alpha.omega_sum() * (1.0 + 1e-12) {
            return Err(format!(
                "instance {instance}: refined sum exceeds the trained one"
            ));
        }
    }
    Ok(())
}
