//! Benchmark stochastic systems, trajectory simulation and dataset sampling.
//!
//! A trajectory over `K` steps of an `n`-dimensional system is stored as one
//! flat vector `[s_0, s_1, ..., s_K]` of length `n (K + 1)`. The surrogate
//! predicts the tail `[s_1, ..., s_K]`; tail component `j` (0-based) is state
//! component `j % n` at time step `j / n + 1`.
//!
//! Noise is additive Gaussian `N(0, diag(noise_cov))`, drawn once per step.
//! By default it is added to the state after the deterministic update; ODE
//! models can instead hold it constant inside the vector field over the step.

mod dataset;
pub mod models;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use dataset::{sample_dataset, substream, TrajectoryDataset};
pub use models::{Dynamics, HoverGains};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    DifferenceEquation,
    Ode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

/// Where the per-step noise sample enters an ODE model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseEntry {
    /// `s_{k+1} = Phi_dt(s_k) + v_k`.
    #[default]
    PostStep,
    /// `s_{k+1}` integrates `f(x) + v_k` over `dt` with `v_k` held constant.
    InField,
}

/// A named stochastic dynamical system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub name: String,
    pub dynamics: Dynamics,
    pub kind: SystemKind,
    /// Sampling time in seconds; unused for difference equations.
    pub dt: f64,
    /// Diagonal of the noise covariance.
    pub noise_cov: Vec<f64>,
    pub integrator: Integrator,
    /// Ignored for difference equations, where both entries coincide.
    #[serde(default)]
    pub noise_entry: NoiseEntry,
    /// Hover controller, quadcopter only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<HoverGains>,
    /// Set by [`apply_shift`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_tag: Option<String>,
}

impl SystemModel {
    /// Periodic 2-D map with noise `diag([0.01, 0.01])^2`.
    pub fn periodic2d() -> Self {
        Self {
            name: "periodic2d".into(),
            dynamics: Dynamics::Periodic2d,
            kind: SystemKind::DifferenceEquation,
            dt: 1.0,
            noise_cov: vec![0.01 * 0.01; 2],
            integrator: Integrator::Rk4,
            noise_entry: NoiseEntry::PostStep,
            controller: None,
            shift_tag: None,
        }
    }

    /// Time-reversed van der Pol, `dt = 0.02`, noise `diag([0.1, 0.1])^2`.
    pub fn trvdp() -> Self {
        Self {
            name: "trvdp".into(),
            dynamics: Dynamics::Trvdp,
            kind: SystemKind::Ode,
            dt: 0.02,
            noise_cov: vec![0.1 * 0.1; 2],
            integrator: Integrator::Rk4,
            noise_entry: NoiseEntry::PostStep,
            controller: None,
            shift_tag: None,
        }
    }

    /// 12-state quadcopter, `dt = 0.05`, noise `diag([0.05·1₆, 0.01·1₆])^2`,
    /// closed loop with the default hover controller.
    pub fn quadcopter12d() -> Self {
        let mut noise_cov = vec![0.05 * 0.05; 6];
        noise_cov.extend(std::iter::repeat(0.01 * 0.01).take(6));
        Self {
            name: "quadcopter12d".into(),
            dynamics: Dynamics::Quadcopter12d,
            kind: SystemKind::Ode,
            dt: 0.05,
            noise_cov,
            integrator: Integrator::Rk4,
            noise_entry: NoiseEntry::PostStep,
            controller: Some(HoverGains::default()),
            shift_tag: None,
        }
    }

    /// Linear difference equation `s_{k+1} = A s_k + v`.
    pub fn linear(name: &str, a: crate::linalg::Matrix, noise_cov: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            dynamics: Dynamics::Linear(a),
            kind: SystemKind::DifferenceEquation,
            dt: 1.0,
            noise_cov,
            integrator: Integrator::Rk4,
            noise_entry: NoiseEntry::PostStep,
            controller: None,
            shift_tag: None,
        }
    }

    /// Looks up a built-in model by name.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "periodic2d" => Ok(Self::periodic2d()),
            "trvdp" => Ok(Self::trvdp()),
            "quadcopter12d" => Ok(Self::quadcopter12d()),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }

    pub fn n(&self) -> usize {
        self.dynamics.dim()
    }

    /// Name plus shift tag, used as provenance in dataset files.
    pub fn label(&self) -> String {
        match &self.shift_tag {
            Some(tag) => format!("{}[{}]", self.name, tag),
            None => self.name.clone(),
        }
    }

    /// Same model with all noise removed.
    pub fn noiseless(&self) -> Self {
        let mut m = self.clone();
        m.noise_cov.iter_mut().for_each(|v| *v = 0.0);
        m
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.noise_cov.len() != n {
            return Err(Error::dim("noise covariance", n, self.noise_cov.len()));
        }
        if self.noise_cov.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "noise covariance entries must be finite and >= 0",
            ));
        }
        if self.kind == SystemKind::Ode && !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive for ODE models"));
        }
        if let Dynamics::Linear(a) = &self.dynamics {
            if a.rows() != a.cols() {
                return Err(Error::dim("linear dynamics", a.rows(), a.cols()));
            }
        }
        Ok(())
    }

    /// Deterministic part of one step.
    pub fn step_deterministic(&self, s: &[f64]) -> Vec<f64> {
        self.step_forced(s, None)
    }

    /// One step with noise sample `v`, entered as `noise_entry` says.
    pub fn step(&self, s: &[f64], v: &[f64]) -> Vec<f64> {
        if self.kind == SystemKind::Ode && self.noise_entry == NoiseEntry::InField {
            return self.step_forced(s, Some(v));
        }
        let mut next = self.step_forced(s, None);
        next.iter_mut().zip(v).for_each(|(x, e)| *x += e);
        next
    }

    /// Update with an optional constant forcing added to the vector field.
    fn step_forced(&self, s: &[f64], forcing: Option<&[f64]>) -> Vec<f64> {
        let force = |out: &mut [f64]| {
            if let Some(v) = forcing {
                out.iter_mut().zip(v).for_each(|(d, e)| *d += e);
            }
        };
        match (&self.dynamics, self.kind) {
            (Dynamics::Periodic2d, _) => models::periodic2d_step(s).to_vec(),
            (Dynamics::Linear(a), _) => a.mul_vec(s),
            (Dynamics::Trvdp, _) => self.integrate(s, |x, out| {
                models::trvdp_field(x, out);
                force(out);
            }),
            (Dynamics::Quadcopter12d, _) => {
                let gains = self.controller.unwrap_or_default();
                let u = gains.control(s);
                self.integrate(s, |x, out| {
                    models::quadcopter_field(x, &u, out);
                    force(out);
                })
            }
        }
    }

    fn integrate(&self, s: &[f64], field: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
        let n = s.len();
        let h = self.dt;
        match self.integrator {
            Integrator::Euler => {
                let mut k1 = vec![0.0; n];
                field(s, &mut k1);
                s.iter().zip(&k1).map(|(x, d)| x + h * d).collect()
            }
            Integrator::Rk4 => {
                let mut k1 = vec![0.0; n];
                let mut k2 = vec![0.0; n];
                let mut k3 = vec![0.0; n];
                let mut k4 = vec![0.0; n];
                let mut tmp = vec![0.0; n];
                field(s, &mut k1);
                axpy(s, 0.5 * h, &k1, &mut tmp);
                field(&tmp, &mut k2);
                axpy(s, 0.5 * h, &k2, &mut tmp);
                field(&tmp, &mut k3);
                axpy(s, h, &k3, &mut tmp);
                field(&tmp, &mut k4);
                (0..n)
                    .map(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            }
        }
    }
}

fn axpy(x: &[f64], a: f64, y: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + a * y[i];
    }
}

/// A change of noise covariance between simulation and deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftSpec {
    /// Multiply every covariance entry.
    NoiseScale(f64),
    /// Replace the covariance diagonal.
    NoiseCov(Vec<f64>),
}

/// Same dynamics with modified noise covariance; the model is tagged as shifted.
pub fn apply_shift(model: &SystemModel, shift: &ShiftSpec) -> Result<SystemModel> {
    model.validate()?;
    let mut out = model.clone();
    match shift {
        ShiftSpec::NoiseScale(s) => {
            if !(s.is_finite() && *s >= 0.0) {
                return Err(Error::invalid(format!("noise scale must be >= 0, got {s}")));
            }
            out.noise_cov.iter_mut().for_each(|v| *v *= s);
            out.shift_tag = Some(format!("noise*{s}"));
        }
        ShiftSpec::NoiseCov(cov) => {
            if cov.len() != model.n() {
                return Err(Error::dim("shift covariance", model.n(), cov.len()));
            }
            if cov.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid("shift covariance entries must be >= 0"));
            }
            out.noise_cov = cov.clone();
            out.shift_tag = Some("noise=explicit".into());
        }
    }
    Ok(out)
}

/// Flattened trajectory `[s_0, ..., s_K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() < 2 * n || values.len() % n != 0 {
            return Err(Error::invalid(format!(
                "trajectory of length {} is not n(K+1) with n = {n}, K >= 1",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.values.len() / self.n - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.values[..self.n]
    }

    /// `[s_1, ..., s_K]`.
    pub fn tail(&self) -> &[f64] {
        &self.values[self.n..]
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Simulates `horizon` steps from `s0`, drawing noise from `rng`.
pub fn simulate<R: Rng + ?Sized>(
    model: &SystemModel,
    s0: &[f64],
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    simulate_recorded(model, s0, horizon, rng).map(|(t, _)| t)
}

/// Like [`simulate`], also returning the `n K` noise samples that were added.
pub fn simulate_recorded<R: Rng + ?Sized>(
    model: &SystemModel,
    s0: &[f64],
    horizon: usize,
    rng: &mut R,
) -> Result<(Trajectory, Vec<f64>)> {
    let n = model.n();
    if s0.len() != n {
        return Err(Error::dim("initial state", n, s0.len()));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon K must be >= 1"));
    }
    let std: Vec<f64> = model.noise_cov.iter().map(|v| v.sqrt()).collect();
    let mut noise = Vec::with_capacity(n * horizon);
    for _ in 0..horizon {
        for sd in &std {
            let z: f64 = rng.sample(StandardNormal);
            noise.push(sd * z);
        }
    }
    let traj = simulate_with_noise(model, s0, horizon, &noise)?;
    Ok((traj, noise))
}

/// Replays a trajectory from an explicit noise sequence of length `n K`.
pub fn simulate_with_noise(
    model: &SystemModel,
    s0: &[f64],
    horizon: usize,
    noise: &[f64],
) -> Result<Trajectory> {
    model.validate()?;
    let n = model.n();
    if s0.len() != n {
        return Err(Error::dim("initial state", n, s0.len()));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon K must be >= 1"));
    }
    if noise.len() != n * horizon {
        return Err(Error::dim("noise sequence", n * horizon, noise.len()));
    }
    let mut values = Vec::with_capacity(n * (horizon + 1));
    values.extend_from_slice(s0);
    let mut s = s0.to_vec();
    for k in 0..horizon {
        let next = model.step(&s, &noise[k * n..(k + 1) * n]);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        values.extend_from_slice(&next);
        s = next;
    }
    Trajectory::new(n, values)
}

/// Support and sampling law of the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub distribution: InitialDistribution,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum InitialDistribution {
    #[default]
    Uniform,
    /// Gaussian with diagonal covariance, truncated to the box.
    TruncatedGaussian { mean: Vec<f64>, cov: Vec<f64> },
}

impl InitialSet {
    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            distribution: InitialDistribution::Uniform,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::dim(
                "initial set bounds",
                self.lower.len(),
                self.upper.len(),
            ));
        }
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u))
        {
            return Err(Error::invalid("initial set requires finite lower <= upper"));
        }
        if let InitialDistribution::TruncatedGaussian { mean, cov } = &self.distribution {
            if mean.len() != self.dim() || cov.len() != self.dim() {
                return Err(Error::dim(
                    "truncated gaussian",
                    self.dim(),
                    mean.len().min(cov.len()),
                ));
            }
            if cov.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid("truncated gaussian covariance must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let d = self.dim();
        match &self.distribution {
            InitialDistribution::Uniform => Ok((0..d)
                .map(|i| {
                    let (l, u) = (self.lower[i], self.upper[i]);
                    if l == u {
                        l
                    } else {
                        rng.gen_range(l..=u)
                    }
                })
                .collect()),
            InitialDistribution::TruncatedGaussian { mean, cov } => {
                const MAX_TRIES: usize = 100_000;
                let mut s = vec![0.0; d];
                for i in 0..d {
                    let (l, u) = (self.lower[i], self.upper[i]);
                    let sd = cov[i].sqrt();
                    let mut accepted = None;
                    for _ in 0..MAX_TRIES {
                        let z: f64 = rng.sample(StandardNormal);
                        let x = mean[i] + sd * z;
                        if (l..=u).contains(&x) {
                            accepted = Some(x);
                            break;
                        }
                    }
                    s[i] = accepted.ok_or_else(|| {
                        Error::invalid(format!(
                            "truncated gaussian has negligible mass in [{l}, {u}] (dim {i})"
                        ))
                    })?;
                }
                Ok(s)
            }
        }
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.len() == self.dim()
            && s.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| l <= x && x <= u)
    }
}
