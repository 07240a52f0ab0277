use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conformal_flowpipe::conformal::{
    self, dataset_residuals, estimate_shift_tv, min_calibration_size, min_calibration_size_strict,
    DivergenceKind, DivergenceSpec, RobustQuantileResult,
};
use conformal_flowpipe::io;
use conformal_flowpipe::pipeline::{
    self, calibrate, check_feasibility, export, refine_model, run_pipeline, sample_config_split,
    train_stage, ExperimentConfig, Split, ValidationInput,
};
use conformal_flowpipe::reach::Flowpipe;
use conformal_flowpipe::surrogate::ModelFile;
use conformal_flowpipe::{Error, Result};
use serde::Serialize;

/// Probabilistically guaranteed flowpipes from simulated trajectories.
#[derive(Parser)]
#[command(name = "flowpipe", version)]
struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config, or a preset: periodic2d, trvdp-shift, quadcopter.
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed_train_data: Option<u64>,
    #[arg(long)]
    seed_train: Option<u64>,
    #[arg(long)]
    seed_calib: Option<u64>,
    #[arg(long)]
    seed_lp: Option<u64>,
    #[arg(long)]
    seed_validate: Option<u64>,
    #[arg(long)]
    seed_shift_reference: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        let s = &mut cfg.seeds;
        let overrides = [
            (&mut s.train_data, self.seed_train_data),
            (&mut s.train, self.seed_train),
            (&mut s.calib, self.seed_calib),
            (&mut s.lp, self.seed_lp),
            (&mut s.validate, self.seed_validate),
            (&mut s.shift_reference, self.seed_shift_reference),
        ];
        for (slot, v) in overrides {
            if let Some(v) = v {
                *slot = v;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample one dataset split to CSV.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// train, lp, calib, validate or reference.
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a surrogate on a dataset CSV.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace the scaling factors by the surface-minimising ones on a held-out dataset.
    Refine {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Robust and vanilla conformal quantiles of the calibration residuals.
    Calibrate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Surrogate flowpipe, inflated when a quantile file is given.
    Reach {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// `robust_quantile.json` from `calibrate`.
        #[arg(long)]
        quantile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coverage of an inflated flowpipe on fresh deployment trajectories.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        flowpipe: PathBuf,
        /// `vanilla_quantile.json`, to report its coverage alongside.
        #[arg(long)]
        vanilla: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-component CSVs and a manifest for plotting.
    Export {
        #[arg(long)]
        flowpipe: PathBuf,
        /// Comma-separated state components; all when absent.
        #[arg(long, value_delimiter = ',')]
        components: Option<Vec<usize>>,
        #[arg(long, default_value = "flowpipe")]
        prefix: String,
        /// Config whose hash goes into the manifest.
        #[arg(long)]
        config: Option<String>,
        /// Trajectory CSV copied alongside for density shading.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage end to end.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram total-variation distance between two residual samples.
    EstimateShift {
        /// Simulator sample: residual CSV, or trajectory CSV with `--model`.
        #[arg(long)]
        sim: PathBuf,
        /// Deployment sample, same format as `--sim`.
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = conformal::DEFAULT_SHIFT_BINS)]
        bins: usize,
    },
    /// Smallest calibration set for a confidence level and shift radius.
    MinCalib {
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long, value_enum, default_value = "tv")]
        divergence: DivergenceArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DivergenceArg {
    Tv,
    Kl,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn residuals_file(path: &Path) -> Result<Vec<f64>> {
    let records = conformal::read_residuals_csv(BufReader::new(File::open(path)?))?;
    Ok(conformal::scalars(&records))
}

fn run(cli: Cli) -> Result<()> {
    let say = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    match cli.command {
        Command::Simulate { cfg, split, out } => {
            let cfg = cfg.load()?;
            let data = sample_config_split(&cfg, split)?;
            io::write_dataset(&out, &data)?;
            say(format!(
                "wrote {} trajectories to {}",
                data.len(),
                out.display()
            ));
        }
        Command::Train { cfg, data, out } => {
            let cfg = cfg.load()?;
            check_feasibility(&cfg)?;
            let data = io::read_dataset(&data)?;
            let trained = train_stage(&cfg, &data)?;
            trained.model.write(&out)?;
            if let Some(last) = trained.loss_history.last() {
                say(format!(
                    "final epoch loss {:.6e}, lipschitz bound {:.4}",
                    last.total, trained.lipschitz_bound
                ));
            }
        }
        Command::Refine {
            cfg,
            model,
            data,
            out,
        } => {
            let cfg = cfg.load()?;
            let model = ModelFile::read(&model)?;
            let (refined, r) =
                refine_model(&model, &io::read_dataset(&data)?, cfg.trained_step_factor)?;
            refined.write(&out)?;
            say(format!(
                "surface {:.6e} -> {:.6e} ({} zero rows skipped)",
                model.alpha.omega_sum(),
                refined.alpha.omega_sum(),
                r.dropped_rows
            ));
        }
        Command::Calibrate {
            cfg,
            model,
            data,
            out,
        } => {
            let cfg = cfg.load()?;
            check_feasibility(&cfg)?;
            let model = ModelFile::read(&model)?;
            let c = calibrate(
                &model,
                &io::read_dataset(&data)?,
                cfg.delta,
                &cfg.divergence,
            )?;
            std::fs::create_dir_all(&out)?;
            conformal::write_residuals_csv(
                &c.records,
                BufWriter::new(File::create(out.join("residuals_calib.csv"))?),
            )?;
            io::write_json(&out.join("robust_quantile.json"), &c.robust)?;
            io::write_json(&out.join("vanilla_quantile.json"), &c.vanilla)?;
            print_json(&c.robust)?;
        }
        Command::Reach {
            cfg,
            model,
            quantile,
            out,
        } => {
            let cfg = cfg.load()?;
            let model = ModelFile::read(&model)?;
            let net = model.network()?;
            let fp = pipeline::reach(&net, &cfg.initial_box()?, &cfg.splits(), &cfg.reach)?
                .with_guarantee(cfg.delta, cfg.divergence.tau);
            let fp = match quantile {
                Some(q) => {
                    let q: RobustQuantileResult = io::read_json(&q)?;
                    fp.inflate(q.r_star, &model.alpha)?
                }
                None => fp,
            };
            fp.write(&out)?;
            say(format!(
                "{} parts, inflated: {}",
                fp.parts().len(),
                fp.is_inflated()
            ));
        }
        Command::Validate {
            cfg,
            model,
            flowpipe,
            vanilla,
            out,
        } => {
            let cfg = cfg.load()?;
            let model = ModelFile::read(&model)?;
            let net = model.network()?;
            let fp = Flowpipe::read(&flowpipe)?;
            let (sim, real) = cfg.models()?;
            let vanilla_r_star = match vanilla {
                Some(p) => Some(io::read_json::<RobustQuantileResult>(&p)?.r_star),
                None => None,
            };
            let report = pipeline::validate(&ValidationInput {
                flowpipe: &fp,
                net: &net,
                deployment: &real,
                simulator: &sim,
                initial_set: &cfg.initial_set,
                samples: cfg.sizes.validate,
                reference_samples: cfg.sizes.shift_reference,
                seed: cfg.seeds.validate,
                reference_seed: cfg.seeds.shift_reference,
                bins: cfg.shift_bins,
                vanilla_r_star,
            })?;
            io::write_json(&out, &report)?;
            print_json(&report)?;
        }
        Command::Export {
            flowpipe,
            components,
            prefix,
            config,
            samples,
            out,
        } => {
            let fp = Flowpipe::read(&flowpipe)?;
            let hash = match config {
                Some(c) => ExperimentConfig::load(&c)?.hash()?,
                None => String::new(),
            };
            let components = components.unwrap_or_else(|| (0..fp.n()).collect());
            let samples = samples.map(|p| io::read_dataset(&p)).transpose()?;
            std::fs::create_dir_all(&out)?;
            let m = export(&fp, &components, &out, &prefix, &hash, samples.as_ref())?;
            say(format!(
                "wrote {} files to {}",
                m.files.len() + 1,
                out.display()
            ));
        }
        Command::Pipeline { cfg, out } => {
            let mut cfg = cfg.load()?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let result = run_pipeline(&cfg)?;
            print_json(&result.report)?;
            say(format!(
                "r* = {} (vanilla {}), config {}",
                result.calibration.robust.r_star,
                result.calibration.vanilla.r_star,
                result.config_hash
            ));
        }
        Command::EstimateShift {
            sim,
            real,
            model,
            bins,
        } => {
            let (a, b) = match model {
                Some(m) => {
                    let model = ModelFile::read(&m)?;
                    let net = model.network()?;
                    let res = |p: &Path| -> Result<Vec<f64>> {
                        Ok(conformal::scalars(&dataset_residuals(
                            &net,
                            &model.alpha,
                            &io::read_dataset(p)?,
                        )?))
                    };
                    (res(&sim)?, res(&real)?)
                }
                None => (residuals_file(&sim)?, residuals_file(&real)?),
            };
            writeln!(
                std::io::stdout().lock(),
                "{}",
                estimate_shift_tv(&a, &b, bins)?
            )?;
        }
        Command::MinCalib {
            delta,
            tau,
            divergence,
        } => {
            let spec = DivergenceSpec {
                kind: match divergence {
                    DivergenceArg::Tv => DivergenceKind::TotalVariation,
                    DivergenceArg::Kl => DivergenceKind::Kl,
                },
                tau,
            };
            #[derive(Serialize)]
            struct MinCalib {
                min_calibration: usize,
                min_calibration_strict: usize,
            }
            print_json(&MinCalib {
                min_calibration: min_calibration_size(delta, &spec)?,
                min_calibration_strict: min_calibration_size_strict(delta, &spec)?,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Infeasible {
                min_calibration: Some(m),
                ..
            } = &e
            {
                eprintln!("minimum calibration size: {m}");
            }
            let code = e.exit_code();
            ExitCode::from(code as u8)
        }
    }
}
