//! Tightens the scaling factors of a trained surrogate on held-out data and
//! shows the effect on the inflation surface and the calibration quantile.

use conformal_flowpipe::conformal::{conformal_quantile, dataset_residuals, scalars};
use conformal_flowpipe::dynamics::{sample_dataset, InitialSet, SystemModel};
use conformal_flowpipe::refine::{refine_scaling, RefinementInput};
use conformal_flowpipe::surrogate::{train, TrainConfig};

fn main() -> conformal_flowpipe::Result<()> {
    let model = SystemModel::periodic2d();
    let init = InitialSet::uniform(vec![-0.5, -0.5], vec![0.5, 0.5]);
    let data = sample_dataset(&model, &init, 8, 3000, 1)?;
    let lp = sample_dataset(&model, &init, 8, 1000, 2)?;
    let calib = sample_dataset(&model, &init, 8, 1000, 3)?;
    let cfg = TrainConfig {
        c: 10.0,
        epochs: 20,
        batch_size: 64,
        learning_rate: 2e-2,
        ..TrainConfig::default()
    };
    let r = train(&data, &cfg, &[2, 32, 16])?;

    let refined = refine_scaling(&RefinementInput::from_records(&dataset_residuals(
        &r.net, &r.alpha, &lp,
    )?)?)?;
    for (name, alpha) in [("trained", &r.alpha), ("refined", &refined.alpha)] {
        let q = conformal_quantile(&scalars(&dataset_residuals(&r.net, alpha, &calib)?), 0.05)?;
        let surface = q.as_f64() * alpha.omega_sum();
        println!(
            "{name}: sum 1/alpha = {:.4}, R* = {q}, inflation surface = {surface:.4}",
            alpha.omega_sum()
        );
    }
    Ok(())
}
