//! Quadcopter surrogate trained on every second step; the interpolation
//! layer fills in the rest and the pipeline runs on the full horizon.

use conformal_flowpipe::pipeline::{run_pipeline, ExperimentConfig};

fn main() -> conformal_flowpipe::Result<()> {
    let mut cfg = ExperimentConfig::quadcopter();
    cfg.sizes.train = 4000;
    cfg.sizes.validate = 4000;
    cfg.sizes.shift_reference = 4000;
    let out = run_pipeline(&cfg)?;
    let net = out.model.network()?;
    println!(
        "network {:?} + interpolation -> {} outputs (n = 12, K = {})",
        net.layer_sizes(),
        net.output_dim(),
        cfg.horizon
    );
    for d in [0, 1, 2] {
        let p = out.flowpipe.project(d, cfg.horizon..=cfg.horizon)?;
        println!("x{} at K: [{:+.4}, {:+.4}]", d + 1, p[0].lower, p[0].upper);
    }
    println!(
        "delta~ = {:.4}, Delta~ = {:.4}",
        out.report.delta_tilde, out.report.flowpipe_coverage
    );
    Ok(())
}
