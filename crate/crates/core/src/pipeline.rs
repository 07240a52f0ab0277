//! End-to-end experiment: sample, train, refine, calibrate, reach, inflate,
//! validate and export.
//!
//! Every randomised stage draws from its own named seed, so changing one
//! seed perturbs one stage only. Each stage is also exposed on its own so it
//! can be re-run from persisted artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conformal::{
    self, coverage_delta_tilde, dataset_residuals, estimate_shift_tv, min_calibration_size,
    min_calibration_size_strict, robust_quantile, DivergenceSpec, QuantileValue, ResidualRecord,
    RobustQuantileResult, DEFAULT_SHIFT_BINS,
};
use crate::dynamics::{
    apply_shift, sample_dataset, InitialSet, NoiseEntry, ShiftSpec, SystemModel, TrajectoryDataset,
};
use crate::io;
use crate::reach::{grid_flowpipe, Flowpipe, Hyperbox, ReachOptions};
use crate::refine::{refine_scaling, refine_scaling_coarse, Refinement, RefinementInput};
use crate::surrogate::{
    build_interp_matrix, interpolate_omega, train, EpochLoss, ModelFile, ModelMetadata,
    ScalingFactors, SurrogateNet, TrainConfig,
};
use crate::{Error, Result};

/// A built-in system by name, or a full model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemChoice {
    Builtin(String),
    Custom(SystemModel),
}

impl SystemChoice {
    pub fn resolve(&self) -> Result<SystemModel> {
        match self {
            SystemChoice::Builtin(name) => SystemModel::builtin(name),
            SystemChoice::Custom(m) => {
                m.validate()?;
                Ok(m.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub train_data: u64,
    pub train: u64,
    pub calib: u64,
    pub lp: u64,
    pub validate: u64,
    /// Fresh simulator sample compared against deployment for the shift estimate.
    pub shift_reference: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            train_data: 1,
            train: 2,
            calib: 3,
            lp: 4,
            validate: 5,
            shift_reference: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSizes {
    pub train: usize,
    pub calib: usize,
    pub lp: usize,
    pub validate: usize,
    pub shift_reference: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        Self {
            train: 10_000,
            calib: 2000,
            lp: 2000,
            validate: 10_000,
            shift_reference: 10_000,
        }
    }
}

fn default_horizon() -> usize {
    20
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_factor() -> usize {
    1
}
fn default_delta() -> f64 {
    0.95
}
fn default_true() -> bool {
    true
}
fn default_bins() -> usize {
    DEFAULT_SHIFT_BINS
}

/// One experiment, as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemChoice,
    /// Deployment-time change of the simulator; validation samples from the shifted model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftSpec>,
    pub initial_set: InitialSet,
    #[serde(rename = "K", default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub sizes: DatasetSizes,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    /// Train on every `f`-th step and interpolate the rest.
    #[serde(default = "default_factor")]
    pub trained_step_factor: usize,
    /// Splits per initial-state dimension; empty means one cell.
    #[serde(default)]
    pub partitions: Vec<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub divergence: DivergenceSpec,
    #[serde(default = "default_true")]
    pub refine: bool,
    #[serde(default)]
    pub reach: ReachOptions,
    #[serde(default = "default_bins")]
    pub shift_bins: usize,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// State components to export; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub export_components: Option<Vec<usize>>,
}

impl ExperimentConfig {
    /// Defaults for `system` over `initial_set`.
    pub fn new(system: SystemChoice, initial_set: InitialSet) -> Self {
        Self {
            system,
            shift: None,
            initial_set,
            horizon: default_horizon(),
            sizes: DatasetSizes::default(),
            train: TrainConfig::default(),
            hidden_layers: default_hidden(),
            trained_step_factor: 1,
            partitions: Vec::new(),
            delta: default_delta(),
            divergence: DivergenceSpec::default(),
            refine: true,
            reach: ReachOptions::default(),
            shift_bins: DEFAULT_SHIFT_BINS,
            seeds: Seeds::default(),
            output_dir: None,
            export_components: None,
        }
    }

    /// Periodic map on `[-0.5, 0.5]^2`, K = 20, confidence 0.95, no shift,
    /// 10 x 10 partitions.
    pub fn periodic2d() -> Self {
        let mut c = Self::new(
            SystemChoice::Builtin("periodic2d".into()),
            InitialSet::uniform(vec![-0.5, -0.5], vec![0.5, 0.5]),
        );
        c.partitions = vec![10, 10];
        c.train = TrainConfig {
            c: 10.0,
            epochs: 60,
            batch_size: 64,
            learning_rate: 2e-2,
            delta_bar: 0.95,
            ..TrainConfig::default()
        };
        c
    }

    /// Time-reversed van der Pol on `[-1.2, -1.195]^2`, K = 30, deployed
    /// with noise standard deviation 0.1378 instead of 0.1, guarded by a
    /// total-variation ball of radius 0.225 at confidence 0.77.
    ///
    /// Noise enters the vector field: added to the state after each step it
    /// pushes a tenth of the trajectories past the unstable limit cycle
    /// within 30 steps, and some overflow.
    pub fn trvdp_shift() -> Self {
        let mut model = SystemModel::trvdp();
        model.noise_entry = NoiseEntry::InField;
        let mut c = Self::new(
            SystemChoice::Custom(model),
            InitialSet::uniform(vec![-1.2, -1.2], vec![-1.195, -1.195]),
        );
        c.horizon = 30;
        c.shift = Some(ShiftSpec::NoiseCov(vec![0.1378f64.powi(2); 2]));
        c.delta = 0.77;
        c.divergence = DivergenceSpec::tv(0.225);
        c.partitions = vec![1, 1];
        c.train = TrainConfig {
            epochs: 40,
            batch_size: 64,
            learning_rate: 5e-3,
            delta_bar: 0.995,
            ..TrainConfig::default()
        };
        c
    }

    /// Quadcopter hover, K = 20, trained on every second step.
    pub fn quadcopter() -> Self {
        let mut lower = vec![-0.2; 6];
        lower.extend([0.0; 6]);
        let mut upper = vec![0.2; 6];
        upper.extend([0.0; 6]);
        let mut c = Self::new(
            SystemChoice::Builtin("quadcopter12d".into()),
            InitialSet::uniform(lower, upper),
        );
        c.trained_step_factor = 2;
        c.partitions = vec![1; 12];
        c.hidden_layers = vec![64, 64];
        c.train = TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 5e-3,
            delta_bar: 0.95,
            ..TrainConfig::default()
        };
        c
    }

    /// Built-in presets by name: `periodic2d`, `trvdp-shift`, `quadcopter`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "periodic2d" => Some(Self::periodic2d()),
            "trvdp-shift" | "trvdp" => Some(Self::trvdp_shift()),
            "quadcopter" | "quadcopter12d" => Some(Self::quadcopter()),
            _ => None,
        }
    }

    /// A preset name, or the path of a JSON config.
    pub fn load(name_or_path: &str) -> Result<Self> {
        match Self::preset(name_or_path) {
            Some(c) => Ok(c),
            None => io::read_json(Path::new(name_or_path)),
        }
    }

    /// Simulator and deployment models.
    pub fn models(&self) -> Result<(SystemModel, SystemModel)> {
        let sim = self.system.resolve()?;
        let real = match &self.shift {
            Some(s) => apply_shift(&sim, s)?,
            None => sim.clone(),
        };
        Ok((sim, real))
    }

    pub fn epsilon(&self) -> f64 {
        1.0 - self.delta
    }

    pub fn splits(&self) -> Vec<usize> {
        if self.partitions.is_empty() {
            vec![1; self.initial_set.dim()]
        } else {
            self.partitions.clone()
        }
    }

    pub fn layer_sizes(&self, n: usize) -> Vec<usize> {
        let mut s = vec![n];
        s.extend(&self.hidden_layers);
        s.push(n * self.horizon / self.trained_step_factor.max(1));
        s
    }

    pub fn initial_box(&self) -> Result<Hyperbox> {
        Hyperbox::new(
            self.initial_set.lower.clone(),
            self.initial_set.upper.clone(),
        )
    }

    /// SHA-256 of the config with the output directory cleared, so the same
    /// experiment hashes alike wherever it is written.
    pub fn hash(&self) -> Result<String> {
        io::config_hash(&ExperimentConfig {
            output_dir: None,
            ..self.clone()
        })
    }

    /// Shape and range checks, without the calibration-size gate.
    pub fn validate(&self) -> Result<()> {
        let model = self.system.resolve()?;
        self.initial_set.validate()?;
        if self.initial_set.dim() != model.n() {
            return Err(Error::dim("initial set", model.n(), self.initial_set.dim()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta must be in (0,1), got {}",
                self.delta
            )));
        }
        self.divergence.validate()?;
        let s = &self.sizes;
        if [s.train, s.calib, s.validate, s.shift_reference].contains(&0)
            || (self.refine && s.lp == 0)
        {
            return Err(Error::invalid("all dataset sizes must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("K must be >= 1"));
        }
        let f = self.trained_step_factor;
        if f == 0 || self.horizon % f != 0 {
            return Err(Error::invalid(format!(
                "trained_step_factor {f} must divide K = {}",
                self.horizon
            )));
        }
        let splits = self.splits();
        if splits.len() != model.n() || splits.contains(&0) {
            return Err(Error::invalid(format!(
                "partitions {splits:?} must give >= 1 split for each of {} dimensions",
                model.n()
            )));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be >= 1"));
        }
        if let Some(shift) = &self.shift {
            apply_shift(&model, shift)?;
        }
        if let Some(c) = &self.export_components {
            if let Some(bad) = c.iter().find(|&&d| d >= model.n()) {
                return Err(Error::invalid(format!(
                    "export component {bad} out of range for n = {}",
                    model.n()
                )));
            }
        }
        self.train.validate(s.train)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    /// Size at which the adjusted level stops being negative.
    pub min_calibration: usize,
    /// Size at which the robust quantile becomes finite.
    pub min_calibration_strict: usize,
    pub calibration_size: usize,
}

/// Refuses configurations whose calibration set is too small for a finite
/// robust quantile at the requested confidence and shift radius.
pub fn check_feasibility(cfg: &ExperimentConfig) -> Result<Feasibility> {
    let min_calibration = min_calibration_size(cfg.delta, &cfg.divergence)?;
    let strict = min_calibration_size_strict(cfg.delta, &cfg.divergence)?;
    if strict > cfg.sizes.calib {
        return Err(Error::Infeasible {
            reason: format!(
                "calibration size {} is below the {strict} needed for delta = {}, tau = {}",
                cfg.sizes.calib, cfg.delta, cfg.divergence.tau
            ),
            min_calibration: Some(strict),
        });
    }
    Ok(Feasibility {
        min_calibration,
        min_calibration_strict: strict,
        calibration_size: cfg.sizes.calib,
    })
}

/// Provenance string recorded for a dataset: source tag plus seed.
pub fn provenance(data: &TrajectoryDataset) -> String {
    format!("{}@seed={}", data.source, data.seed)
}

/// Samples a dataset tagged with the split it belongs to.
pub fn sample_split(
    model: &SystemModel,
    init: &InitialSet,
    horizon: usize,
    count: usize,
    seed: u64,
    split: &str,
) -> Result<TrajectoryDataset> {
    let mut d = sample_dataset(model, init, horizon, count, seed)?;
    d.source = format!("{}#{split}", d.source);
    Ok(d)
}

/// Dataset splits drawn by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Lp,
    Calib,
    /// Drawn from the deployment model.
    Validate,
    /// Fresh simulator sample for the shift estimate.
    Reference,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Lp => "lp",
            Split::Calib => "calib",
            Split::Validate => "validate",
            Split::Reference => "reference",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Split::Train,
            Split::Lp,
            Split::Calib,
            Split::Validate,
            Split::Reference,
        ]
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Error::invalid(format!("unknown split `{s}`")))
    }
}

/// Samples `split` with the size and seed the config assigns to it.
pub fn sample_config_split(cfg: &ExperimentConfig, split: Split) -> Result<TrajectoryDataset> {
    let (sim, real) = cfg.models()?;
    let (s, z) = (&cfg.seeds, &cfg.sizes);
    let (model, count, seed) = match split {
        Split::Train => (&sim, z.train, s.train_data),
        Split::Lp => (&sim, z.lp, s.lp),
        Split::Calib => (&sim, z.calib, s.calib),
        Split::Validate => (&real, z.validate, s.validate),
        Split::Reference => (&sim, z.shift_reference, s.shift_reference),
    };
    sample_split(
        model,
        &cfg.initial_set,
        cfg.horizon,
        count,
        seed,
        split.name(),
    )
}

/// [`train_surrogate`] with the config's training seed taken from `seeds.train`.
pub fn train_stage(cfg: &ExperimentConfig, data: &TrajectoryDataset) -> Result<Trained> {
    let mut c = cfg.clone();
    c.train.seed = cfg.seeds.train;
    train_surrogate(&c, data)
}

pub struct Trained {
    pub model: ModelFile,
    pub loss_history: Vec<EpochLoss>,
    pub lipschitz_bound: f64,
}

/// Trains on `data` (sub-sampled in time when the config asks for it) and
/// returns a model predicting every step.
pub fn train_surrogate(cfg: &ExperimentConfig, data: &TrajectoryDataset) -> Result<Trained> {
    let n = data.n;
    let factor = cfg.trained_step_factor;
    let coarse;
    let fit_on = if factor > 1 {
        coarse = data.subsample_steps(factor)?;
        &coarse
    } else {
        data
    };
    let result = train(fit_on, &cfg.train, &cfg.layer_sizes(n))?;
    let mut notes = Vec::new();
    let (net, alpha) = if factor > 1 {
        let nk = n * data.horizon;
        let net = result
            .net
            .with_interp(build_interp_matrix(nk / factor, nk, n)?)?;
        let alpha =
            ScalingFactors::from_omega(&interpolate_omega(&result.alpha.omega(), n, factor)?)?;
        notes.push(format!(
            "trained on every {factor}th step; prediction and alpha interpolated"
        ));
        (net, alpha)
    } else {
        (result.net, result.alpha)
    };
    let metadata = ModelMetadata {
        n,
        horizon: data.horizon,
        loss_mode: cfg.train.loss_mode,
        seed: cfg.train.seed,
        trained_on: Some(provenance(data)),
        notes,
    };
    Ok(Trained {
        model: ModelFile::new(&net, alpha, result.q, metadata)?,
        loss_history: result.loss_history,
        lipschitz_bound: result.lipschitz_bound,
    })
}

fn ensure_held_out(model: &ModelFile, data: &TrajectoryDataset, purpose: &str) -> Result<()> {
    if model.metadata.trained_on.as_deref() == Some(provenance(data).as_str()) {
        return Err(Error::invalid(format!(
            "{purpose} dataset `{}` is the training dataset",
            provenance(data)
        )));
    }
    if data.source.ends_with("#train") {
        return Err(Error::invalid(format!(
            "{purpose} dataset `{}` is tagged as training data",
            data.source
        )));
    }
    Ok(())
}

/// Replaces the model's scaling factors by the surface-minimising ones
/// computed on the held-out `lp` dataset.
pub fn refine_model(
    model: &ModelFile,
    lp: &TrajectoryDataset,
    trained_step_factor: usize,
) -> Result<(ModelFile, Refinement)> {
    ensure_held_out(model, lp, "refinement")?;
    let net = model.network()?;
    let records = dataset_residuals(&net, &model.alpha, lp)?;
    let input = RefinementInput::from_records(&records)?;
    let r = if trained_step_factor > 1 {
        refine_scaling_coarse(&input, model.metadata.n, trained_step_factor)?
    } else {
        refine_scaling(&input)?
    };
    let mut out = model.clone();
    out.alpha = r.alpha.clone();
    out.metadata.notes.push(format!(
        "alpha refined on {}: sum of omega {:.6e} -> {:.6e}",
        provenance(lp),
        model.alpha.omega_sum(),
        r.alpha.omega_sum()
    ));
    Ok((out, r))
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub records: Vec<ResidualRecord>,
    pub robust: RobustQuantileResult,
    /// Same procedure with no shift allowance.
    pub vanilla: RobustQuantileResult,
}

pub fn calibrate(
    model: &ModelFile,
    calib: &TrajectoryDataset,
    delta: f64,
    divergence: &DivergenceSpec,
) -> Result<Calibration> {
    ensure_held_out(model, calib, "calibration")?;
    let net = model.network()?;
    let records = dataset_residuals(&net, &model.alpha, calib)?;
    let scalars = conformal::scalars(&records);
    let mut robust = robust_quantile(&scalars, 1.0 - delta, divergence)?;
    robust.calibration_source = Some(provenance(calib));
    let mut vanilla = robust_quantile(
        &scalars,
        1.0 - delta,
        &DivergenceSpec {
            tau: 0.0,
            ..*divergence
        },
    )?;
    vanilla.calibration_source = Some(provenance(calib));
    Ok(Calibration {
        records,
        robust,
        vanilla,
    })
}

/// Surrogate flowpipe over a regular partition of `init`.
pub fn reach(
    net: &SurrogateNet,
    init: &Hyperbox,
    splits: &[usize],
    opts: &ReachOptions,
) -> Result<Flowpipe> {
    grid_flowpipe(net, init, splits, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Fraction of fresh residuals at or below `r*`.
    pub delta_tilde: f64,
    /// Fraction of fresh trajectories inside the inflated flowpipe.
    #[serde(rename = "Delta_tilde")]
    pub flowpipe_coverage: f64,
    /// Histogram estimate of the residual shift between simulator and deployment.
    pub tau_tilde: f64,
    /// `delta_tilde` at the unshifted quantile, when one was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vanilla_delta_tilde: Option<f64>,
    pub samples: usize,
    pub contained: usize,
    pub covered: usize,
    pub reference_samples: usize,
    pub seed: u64,
    pub reference_seed: u64,
}

pub struct ValidationInput<'a> {
    /// Inflated flowpipe; carries `r*` and `alpha`.
    pub flowpipe: &'a Flowpipe,
    pub net: &'a SurrogateNet,
    pub deployment: &'a SystemModel,
    pub simulator: &'a SystemModel,
    pub initial_set: &'a InitialSet,
    pub samples: usize,
    pub reference_samples: usize,
    pub seed: u64,
    pub reference_seed: u64,
    pub bins: usize,
    pub vanilla_r_star: Option<QuantileValue>,
}

pub fn validate(input: &ValidationInput<'_>) -> Result<ValidationReport> {
    let fp = input.flowpipe;
    let (r_star, alpha) = match (fp.r_star(), fp.alpha()) {
        (Some(r), Some(a)) if fp.is_inflated() => (r, ScalingFactors::new(a.to_vec())?),
        _ => return Err(Error::invalid("validation needs an inflated flowpipe")),
    };
    if fp.n() != input.net.input_dim() || fp.n() * fp.horizon() != input.net.output_dim() {
        return Err(Error::dim(
            "flowpipe vs surrogate width",
            fp.n() * fp.horizon(),
            input.net.output_dim(),
        ));
    }
    let real = sample_split(
        input.deployment,
        input.initial_set,
        fp.horizon(),
        input.samples,
        input.seed,
        "validate",
    )?;
    let real_records = dataset_residuals(input.net, &alpha, &real)?;
    let real_scalars = conformal::scalars(&real_records);
    let mut contained = 0;
    for i in 0..real.len() {
        if fp.contains(&real.trajectory(i))? {
            contained += 1;
        }
    }
    let covered = real_scalars.iter().filter(|&&r| r <= r_star).count();
    let sim = sample_split(
        input.simulator,
        input.initial_set,
        fp.horizon(),
        input.reference_samples,
        input.reference_seed,
        "reference",
    )?;
    let sim_scalars = conformal::scalars(&dataset_residuals(input.net, &alpha, &sim)?);
    let vanilla_delta_tilde = input
        .vanilla_r_star
        .map(|v| coverage_delta_tilde(&real_scalars, v))
        .transpose()?;
    Ok(ValidationReport {
        delta_tilde: covered as f64 / real.len() as f64,
        flowpipe_coverage: contained as f64 / real.len() as f64,
        tau_tilde: estimate_shift_tv(&sim_scalars, &real_scalars, input.bins)?,
        vanilla_delta_tilde,
        samples: real.len(),
        contained,
        covered,
        reference_samples: sim.len(),
        seed: input.seed,
        reference_seed: input.reference_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub config_hash: String,
    pub n: usize,
    #[serde(rename = "K")]
    pub horizon: usize,
    pub inflated: bool,
    pub components: Vec<usize>,
    pub files: Vec<String>,
}

/// Writes `<prefix>_x<d>.csv` (rows `step,lower,upper`) for each requested
/// component, an optional `<prefix>_samples.csv`, and `<prefix>_manifest.json`.
pub fn export(
    fp: &Flowpipe,
    components: &[usize],
    dir: &Path,
    prefix: &str,
    config_hash: &str,
    samples: Option<&TrajectoryDataset>,
) -> Result<ExportManifest> {
    if let Some(bad) = components.iter().find(|&&d| d >= fp.n()) {
        return Err(Error::invalid(format!(
            "unknown component {bad} for n = {}",
            fp.n()
        )));
    }
    let mut files = Vec::new();
    for &d in components {
        let name = format!("{prefix}_x{d}.csv");
        io::write_projection_csv(&dir.join(&name), &fp.project(d, 0..=fp.horizon())?)?;
        files.push(name);
    }
    if let Some(s) = samples {
        let name = format!("{prefix}_samples.csv");
        io::write_dataset(&dir.join(&name), s)?;
        files.push(name);
    }
    let manifest = ExportManifest {
        config_hash: config_hash.to_string(),
        n: fp.n(),
        horizon: fp.horizon(),
        inflated: fp.is_inflated(),
        components: components.to_vec(),
        files,
    };
    io::write_json(&dir.join(format!("{prefix}_manifest.json")), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub sample_seconds: f64,
    pub train_seconds: f64,
    pub refine_seconds: f64,
    pub calibrate_seconds: f64,
    pub reach_seconds: f64,
    pub validate_seconds: f64,
}

pub struct PipelineOutput {
    pub config_hash: String,
    pub feasibility: Feasibility,
    pub model: ModelFile,
    pub loss_history: Vec<EpochLoss>,
    pub refinement: Option<Refinement>,
    pub calibration: Calibration,
    pub surrogate: Flowpipe,
    pub flowpipe: Flowpipe,
    pub report: ValidationReport,
    pub timings: StageTimings,
}

/// Runs every stage; artifacts go to `cfg.output_dir` when set.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let feasibility = check_feasibility(cfg).map_err(|e| e.in_stage("config"))?;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_stage("export"))?;
    }
    let config_hash = cfg.hash()?;
    let (sim, real) = cfg.models()?;
    let mut timings = StageTimings::default();
    let s = &cfg.seeds;

    let t = Instant::now();
    let train_data = sample_config_split(cfg, Split::Train).map_err(|e| e.in_stage("sample"))?;
    timings.sample_seconds += t.elapsed().as_secs_f64();

    let t = Instant::now();
    let trained = train_stage(cfg, &train_data).map_err(|e| e.in_stage("train"))?;
    timings.train_seconds = t.elapsed().as_secs_f64();
    let mut model = trained.model;

    let t = Instant::now();
    let mut lp_data = None;
    let refinement = if cfg.refine {
        let lp = sample_config_split(cfg, Split::Lp).map_err(|e| e.in_stage("refine"))?;
        let (m, r) =
            refine_model(&model, &lp, cfg.trained_step_factor).map_err(|e| e.in_stage("refine"))?;
        model = m;
        lp_data = Some(lp);
        Some(r)
    } else {
        None
    };
    timings.refine_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let calib_data = sample_config_split(cfg, Split::Calib).map_err(|e| e.in_stage("calibrate"))?;
    let calibration = calibrate(&model, &calib_data, cfg.delta, &cfg.divergence)
        .map_err(|e| e.in_stage("calibrate"))?;
    timings.calibrate_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let net = model.network()?;
    let surrogate = reach(&net, &cfg.initial_box()?, &cfg.splits(), &cfg.reach)
        .map_err(|e| e.in_stage("reach"))?
        .with_guarantee(cfg.delta, cfg.divergence.tau);
    let flowpipe = surrogate
        .inflate(calibration.robust.r_star, &model.alpha)
        .map_err(|e| e.in_stage("reach"))?;
    timings.reach_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let report = validate(&ValidationInput {
        flowpipe: &flowpipe,
        net: &net,
        deployment: &real,
        simulator: &sim,
        initial_set: &cfg.initial_set,
        samples: cfg.sizes.validate,
        reference_samples: cfg.sizes.shift_reference,
        seed: s.validate,
        reference_seed: s.shift_reference,
        bins: cfg.shift_bins,
        vanilla_r_star: Some(calibration.vanilla.r_star),
    })
    .map_err(|e| e.in_stage("validate"))?;
    timings.validate_seconds = t.elapsed().as_secs_f64();

    let out = PipelineOutput {
        config_hash,
        feasibility,
        model,
        loss_history: trained.loss_history,
        refinement,
        calibration,
        surrogate,
        flowpipe,
        report,
        timings,
    };
    if let Some(dir) = &cfg.output_dir {
        write_artifacts(cfg, &out, dir, &train_data, lp_data.as_ref(), &calib_data)
            .map_err(|e| e.in_stage("export"))?;
    }
    Ok(out)
}

fn write_artifacts(
    cfg: &ExperimentConfig,
    out: &PipelineOutput,
    dir: &Path,
    train_data: &TrajectoryDataset,
    lp_data: Option<&TrajectoryDataset>,
    calib_data: &TrajectoryDataset,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_json(&dir.join("config.json"), cfg)?;
    io::write_json(&dir.join("feasibility.json"), &out.feasibility)?;
    io::write_dataset(&dir.join("train.csv"), train_data)?;
    if let Some(lp) = lp_data {
        io::write_dataset(&dir.join("lp.csv"), lp)?;
    }
    io::write_dataset(&dir.join("calib.csv"), calib_data)?;
    out.model.write(&dir.join("model.json"))?;
    io::write_json(&dir.join("loss_history.json"), &out.loss_history)?;
    conformal::write_residuals_csv(
        &out.calibration.records,
        std::io::BufWriter::new(std::fs::File::create(dir.join("residuals_calib.csv"))?),
    )?;
    io::write_json(&dir.join("robust_quantile.json"), &out.calibration.robust)?;
    io::write_json(&dir.join("vanilla_quantile.json"), &out.calibration.vanilla)?;
    out.surrogate.write(&dir.join("flowpipe_surrogate.json"))?;
    out.flowpipe.write(&dir.join("flowpipe.json"))?;
    io::write_json(&dir.join("report.json"), &out.report)?;
    // wall-clock times differ between runs; kept apart from the reproducible artifacts
    io::write_json(&dir.join("timings.json"), &out.timings)?;
    let components = cfg
        .export_components
        .clone()
        .unwrap_or_else(|| (0..out.flowpipe.n()).collect());
    export(
        &out.surrogate,
        &components,
        dir,
        "surrogate",
        &out.config_hash,
        None,
    )?;
    export(
        &out.flowpipe,
        &components,
        dir,
        "flowpipe",
        &out.config_hash,
        None,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn tiny() -> ExperimentConfig {
        let a = Matrix::from_rows(&[vec![0.95, 0.1], vec![-0.1, 0.95]]).unwrap();
        let mut c = ExperimentConfig::new(
            SystemChoice::Custom(SystemModel::linear("rot", a, vec![1e-4, 1e-4])),
            InitialSet::uniform(vec![-0.5, -0.5], vec![0.5, 0.5]),
        );
        c.horizon = 4;
        c.sizes = DatasetSizes {
            train: 300,
            calib: 200,
            lp: 100,
            validate: 300,
            shift_reference: 300,
        };
        c.hidden_layers = vec![8];
        c.partitions = vec![2, 2];
        c.delta = 0.9;
        c.train.epochs = 5;
        c.train.batch_size = 32;
        c
    }

    #[test]
    fn config_json_round_trip() {
        for c in [
            tiny(),
            ExperimentConfig::periodic2d(),
            ExperimentConfig::trvdp_shift(),
            ExperimentConfig::quadcopter(),
        ] {
            let s = serde_json::to_string(&c).unwrap();
            let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
            assert_eq!(back, c);
            c.validate().unwrap();
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"system": "periodic2d", "initial_set": {"lower": [-0.5, -0.5], "upper": [0.5, 0.5]}}"#,
        )
        .unwrap();
        assert_eq!(c.horizon, 20);
        assert_eq!(c.sizes.train, 10_000);
        assert_eq!(c.sizes.calib, 2000);
        assert_eq!(c.splits(), vec![1, 1]);
    }

    #[test]
    fn infeasible_before_training() {
        let mut c = tiny();
        c.delta = 0.77;
        c.divergence = DivergenceSpec::tv(0.225);
        match run_pipeline(&c) {
            Err(e) => {
                assert_eq!(e.exit_code(), 2);
                assert!(e.to_string().contains("config"));
            }
            Ok(_) => panic!("expected infeasible"),
        }
    }

    #[test]
    fn tiny_pipeline_runs() {
        let out = run_pipeline(&tiny()).unwrap();
        assert_eq!(out.surrogate.parts().len(), 4);
        assert_eq!(
            out.calibration.robust.r_star,
            out.calibration.vanilla.r_star
        );
        let r = out.report;
        assert!(r.flowpipe_coverage >= r.delta_tilde);
        assert!((0.0..=1.0).contains(&r.tau_tilde));
    }

    #[test]
    fn calibration_refuses_training_data() {
        let c = tiny();
        let sim = c.system.resolve().unwrap();
        let data = sample_split(&sim, &c.initial_set, c.horizon, 300, 1, "train").unwrap();
        let trained = train_surrogate(&c, &data).unwrap();
        assert!(calibrate(&trained.model, &data, 0.9, &DivergenceSpec::default()).is_err());
    }
}
