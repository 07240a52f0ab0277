//! Trains the same architecture under the quantile loss and under MSE and
//! compares the 0.95-quantile of the per-sample surface bound on fresh data.

use conformal_flowpipe::conformal::{dataset_residuals, empirical_quantile};
use conformal_flowpipe::dynamics::{sample_dataset, InitialSet, SystemModel};
use conformal_flowpipe::surrogate::{train, LossMode, TrainConfig};

fn main() -> conformal_flowpipe::Result<()> {
    let model = SystemModel::periodic2d();
    let init = InitialSet::uniform(vec![-0.5, -0.5], vec![0.5, 0.5]);
    let k = 10;
    let data = sample_dataset(&model, &init, k, 4000, 1)?;
    let fresh = sample_dataset(&model, &init, k, 4000, 2)?;
    let sizes = [2, 32, 32, 2 * k];
    for mode in [LossMode::Quantile, LossMode::Mse] {
        let cfg = TrainConfig {
            loss_mode: mode,
            c: 10.0,
            epochs: 40,
            batch_size: 64,
            learning_rate: 2e-2,
            seed: 7,
            ..TrainConfig::default()
        };
        let r = train(&data, &cfg, &sizes)?;
        let records = dataset_residuals(&r.net, &r.alpha, &fresh)?;
        let per_comp = r.alpha.omega_sum() / (2 * k) as f64;
        let ub: Vec<f64> = records.iter().map(|x| x.scalar * per_comp).collect();
        println!(
            "{mode:?}: q = {:.4}, 0.95-quantile of UB/(nK) = {:.4}, Lipschitz bound {:.2}",
            r.q,
            empirical_quantile(&ub, 0.95)?,
            r.lipschitz_bound
        );
    }
    Ok(())
}
