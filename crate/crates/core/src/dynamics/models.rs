//! Deterministic parts of the built-in benchmark systems.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// TRVDP damping parameter.
pub const TRVDP_MU: f64 = -1.0;

/// Gravity constant used by the quadcopter model.
const G: f64 = 9.81;

/// Which built-in update rule a [`super::SystemModel`] uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type", content = "matrix")]
pub enum Dynamics {
    /// Two-dimensional periodic difference equation.
    Periodic2d,
    /// Time-reversed van der Pol oscillator (ODE, `mu = -1`).
    Trvdp,
    /// Twelve-state quadcopter ODE with a hover controller.
    Quadcopter12d,
    /// `s_{k+1} = A s_k`, for synthetic tests.
    Linear(Matrix),
}

impl Dynamics {
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Periodic2d | Dynamics::Trvdp => 2,
            Dynamics::Quadcopter12d => 12,
            Dynamics::Linear(a) => a.rows(),
        }
    }
}

/// One noise-free step of the periodic map.
pub fn periodic2d_step(s: &[f64]) -> [f64; 2] {
    let (x, y) = (s[0], s[1]);
    [
        0.985 * y + (0.5 * x).sin() - 0.6 * (x + y).sin() - 0.07,
        0.985 * x + (0.5 * y).cos() - 0.6 * (x + y).cos() - 0.07,
    ]
}

/// TRVDP vector field.
pub fn trvdp_field(s: &[f64], out: &mut [f64]) {
    let (x1, x2) = (s[0], s[1]);
    out[0] = x2;
    out[1] = TRVDP_MU * x2 * (1.0 - x1 * x1) - x1;
}

/// Gains of the built-in proportional-derivative hover controller.
///
/// Altitude is regulated with thrust `u1`, roll and pitch with the torques
/// `u2`, `u3`. Horizontal position and yaw are left uncontrolled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoverGains {
    pub altitude_p: f64,
    pub altitude_d: f64,
    pub attitude_p: f64,
    pub attitude_d: f64,
}

impl Default for HoverGains {
    fn default() -> Self {
        Self {
            altitude_p: 4.0,
            altitude_d: 4.0,
            attitude_p: 16.0,
            attitude_d: 8.0,
        }
    }
}

impl HoverGains {
    /// Control input `(u1, u2, u3)` for state `x` (0-based indices).
    pub fn control(&self, x: &[f64]) -> [f64; 3] {
        // near level flight: x3' ~ -x6, x6' ~ -u1/1.4, x7' ~ x10, x10' = 18.5185 u2
        let u1 = 1.4 * (-self.altitude_p * x[2] + self.altitude_d * x[5]);
        let u2 = -(self.attitude_p * x[6] + self.attitude_d * x[9]) / 18.5185;
        let u3 = -(self.attitude_p * x[7] + self.attitude_d * x[10]) / 18.5185;
        [u1, u2, u3]
    }
}

/// Quadcopter vector field with the control held constant over the step.
pub fn quadcopter_field(x: &[f64], u: &[f64; 3], out: &mut [f64]) {
    let (c7, s7) = (x[6].cos(), x[6].sin());
    let (c8, s8) = (x[7].cos(), x[7].sin());
    let (c9, s9) = (x[8].cos(), x[8].sin());
    let t8 = s8 / c8;
    let (x4, x5, x6) = (x[3], x[4], x[5]);
    let (x10, x11, x12) = (x[9], x[10], x[11]);

    out[0] = c8 * c9 * x4 + (s7 * s8 * c9 - c7 * s9) * x5 + (c7 * s8 * c9 + s7 * s9) * x6;
    out[1] = c8 * s9 * x4 + (s7 * s8 * s9 + c7 * c9) * x5 + (c7 * s8 * s9 - s7 * c9) * x6;
    out[2] = s8 * x4 - s7 * c8 * x5 - c7 * c8 * x6;
    out[3] = x12 * x5 - x11 * x6 - G * s8;
    out[4] = x10 * x6 - x12 * x4 + G * c8 * s7;
    out[5] = x11 * x4 - x10 * x5 + G * c8 * c7 - G - u[0] / 1.4;
    out[6] = x10 + s7 * t8 * x11 + c7 * t8 * x12;
    out[7] = c7 * x11 - s7 * x12;
    out[8] = (s7 / c8) * x11 + (c7 / c8) * x12;
    out[9] = -0.9259 * x11 * x12 + 18.5185 * u[1];
    out[10] = 0.9259 * x10 * x12 + 18.5185 * u[2];
    out[11] = 0.0;
}
