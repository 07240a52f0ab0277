use super::SurrogateNet;

pub const POWER_ITERATIONS: usize = 100;
pub const POWER_REL_TOL: f64 = 1e-8;

/// Upper bound on the global l2 Lipschitz constant: product of per-layer
/// spectral norms (ReLU is 1-Lipschitz).
///
/// With an interpolation matrix `[W_s | W_y]` reading `[s_0; y]`, the bound
/// is `|W_s| + |W_y| * L`.
pub fn lipschitz_bound(net: &SurrogateNet) -> f64 {
    let base: f64 = net
        .layers()
        .iter()
        .map(|l| l.weights.spectral_norm(POWER_ITERATIONS, POWER_REL_TOL))
        .product();
    match net.interp() {
        None => base,
        Some(w) if !net.interp_reads_input() => {
            w.spectral_norm(POWER_ITERATIONS, POWER_REL_TOL) * base
        }
        Some(w) => {
            let n = net.input_dim();
            let ws = w
                .column_block(0, n)
                .spectral_norm(POWER_ITERATIONS, POWER_REL_TOL);
            let wy = w
                .column_block(n, w.cols())
                .spectral_norm(POWER_ITERATIONS, POWER_REL_TOL);
            ws + wy * base
        }
    }
}
