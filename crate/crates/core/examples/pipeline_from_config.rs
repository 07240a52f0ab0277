//! Runs the whole pipeline from a JSON config file or a built-in preset.
//!
//! ```text
//! cargo run --example pipeline_from_config -- periodic2d
//! cargo run --example pipeline_from_config -- path/to/config.json
//! ```

use std::path::Path;

use conformal_flowpipe::io::read_json;
use conformal_flowpipe::pipeline::{run_pipeline, ExperimentConfig};

fn main() -> conformal_flowpipe::Result<()> {
    let arg = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "periodic2d".into());
    let cfg = match arg.as_str() {
        "periodic2d" => ExperimentConfig::periodic2d(),
        "trvdp" => ExperimentConfig::trvdp_shift(),
        "quadcopter" => ExperimentConfig::quadcopter(),
        path => read_json(Path::new(path))?,
    };
    let out = run_pipeline(&cfg)?;
    let r = &out.report;
    println!("config hash      {}", out.config_hash);
    println!("r* (robust)      {}", out.calibration.robust.r_star);
    println!("r* (vanilla)     {}", out.calibration.vanilla.r_star);
    println!("delta_tilde      {:.4}", r.delta_tilde);
    println!("Delta_tilde      {:.4}", r.flowpipe_coverage);
    if let Some(v) = r.vanilla_delta_tilde {
        println!("vanilla delta~   {v:.4}");
    }
    println!("tau_tilde        {:.4}", r.tau_tilde);
    println!("timings          {:?}", out.timings);
    Ok(())
}
