//! Adjusted miscoverage level, minimum calibration sizes and the robust
//! quantile of a synthetic residual sample.

use conformal_flowpipe::conformal::{
    adjusted_epsilon, conformal_quantile, min_calibration_size, min_calibration_size_strict,
    robust_quantile, DivergenceSpec,
};
use rand::{Rng, SeedableRng};

fn main() -> conformal_flowpipe::Result<()> {
    let tv = DivergenceSpec::tv(0.225);
    println!(
        "eps_bar(0.23, TV 0.225, m = 1e4) = {:.7}",
        adjusted_epsilon(0.23, 10_000, &tv)?
    );
    println!(
        "minimum calibration size for delta = 0.77: {} (first non-negative level), {} (finite quantile)",
        min_calibration_size(0.77, &tv)?,
        min_calibration_size_strict(0.77, &tv)?
    );

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let residuals: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>().powi(2)).collect();
    println!(
        "vanilla 0.9 quantile: {}",
        conformal_quantile(&residuals, 0.1)?
    );
    for spec in [
        DivergenceSpec::tv(0.0),
        DivergenceSpec::tv(0.05),
        DivergenceSpec::kl(0.05),
    ] {
        let r = robust_quantile(&residuals, 0.1, &spec)?;
        println!(
            "{:?} tau = {}: eps_bar = {:.5}, index {}, r* = {}",
            spec.kind, spec.tau, r.epsilon_bar, r.index, r.r_star
        );
    }
    Ok(())
}
