//! End-to-end runs of the library pipeline and the `flowpipe` binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use conformal_flowpipe::conformal::{DivergenceSpec, RobustQuantileResult};
use conformal_flowpipe::dynamics::{InitialSet, SystemModel};
use conformal_flowpipe::io::{self, read_projection_csv};
use conformal_flowpipe::linalg::Matrix;
use conformal_flowpipe::pipeline::{
    calibrate, run_pipeline, DatasetSizes, ExperimentConfig, ExportManifest, SystemChoice,
    ValidationReport,
};
use conformal_flowpipe::surrogate::ModelFile;

fn tiny(dir: Option<&Path>) -> ExperimentConfig {
    let a = Matrix::from_rows(&[vec![0.95, 0.1], vec![-0.1, 0.95]]).unwrap();
    let mut c = ExperimentConfig::new(
        SystemChoice::Custom(SystemModel::linear("rot", a, vec![1e-4, 1e-4])),
        InitialSet::uniform(vec![-0.5, -0.5], vec![0.5, 0.5]),
    );
    c.horizon = 4;
    c.sizes = DatasetSizes {
        train: 300,
        calib: 400,
        lp: 100,
        validate: 500,
        shift_reference: 300,
    };
    c.hidden_layers = vec![8];
    c.partitions = vec![2, 2];
    c.delta = 0.9;
    c.divergence = DivergenceSpec::tv(0.02);
    c.train.epochs = 5;
    c.train.batch_size = 32;
    c.output_dir = dir.map(Path::to_path_buf);
    c
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn repeated_runs_write_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&tiny(Some(a.path()))).unwrap();
    run_pipeline(&tiny(Some(b.path()))).unwrap();
    let names = files(a.path());
    assert_eq!(names, files(b.path()));
    for expected in [
        "config.json",
        "model.json",
        "calib.csv",
        "residuals_calib.csv",
        "robust_quantile.json",
        "vanilla_quantile.json",
        "flowpipe.json",
        "flowpipe_surrogate.json",
        "report.json",
        "timings.json",
    ] {
        assert!(names.iter().any(|n| n == expected), "missing {expected}");
    }
    for name in names.iter().filter(|n| *n != "timings.json") {
        // config.json differs only in the output directory
        if name == "config.json" {
            continue;
        }
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn stored_artifacts_reproduce_the_quantile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Some(dir.path()));
    let out = run_pipeline(&cfg).unwrap();
    let model = ModelFile::read(&dir.path().join("model.json")).unwrap();
    let calib = io::read_dataset(&dir.path().join("calib.csv")).unwrap();
    let again = calibrate(&model, &calib, cfg.delta, &cfg.divergence).unwrap();
    let stored: RobustQuantileResult =
        io::read_json(&dir.path().join("robust_quantile.json")).unwrap();
    assert_eq!(again.robust, stored);
    assert_eq!(again.robust.r_star, out.calibration.robust.r_star);
    let report: ValidationReport = io::read_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(report, out.report);
}

#[test]
fn zero_radius_makes_robust_equal_vanilla() {
    let mut cfg = tiny(None);
    cfg.divergence = DivergenceSpec::tv(0.0);
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(
        out.calibration.robust.r_star,
        out.calibration.vanilla.r_star
    );
    assert_eq!(out.report.vanilla_delta_tilde, Some(out.report.delta_tilde));
}

#[test]
fn export_writes_components_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&tiny(Some(dir.path()))).unwrap();
    for prefix in ["surrogate", "flowpipe"] {
        for d in 0..2 {
            assert!(dir.path().join(format!("{prefix}_x{d}.csv")).exists());
        }
        let m: ExportManifest =
            io::read_json(&dir.path().join(format!("{prefix}_manifest.json"))).unwrap();
        assert_eq!(m.config_hash, out.config_hash);
        assert_eq!((m.n, m.horizon, m.components.clone()), (2, 4, vec![0, 1]));
        assert_eq!(m.inflated, prefix == "flowpipe");
    }
    for d in 0..2 {
        let s = read_projection_csv(&dir.path().join(format!("surrogate_x{d}.csv"))).unwrap();
        let f = read_projection_csv(&dir.path().join(format!("flowpipe_x{d}.csv"))).unwrap();
        assert_eq!(s.len(), 5);
        for (a, b) in s.iter().zip(&f) {
            assert_eq!(a.step, b.step);
            assert!(b.lower <= a.lower && b.upper >= a.upper);
            if a.step == 0 {
                assert_eq!((a.lower, a.upper), (b.lower, b.upper));
            } else {
                assert!(b.lower < a.lower && b.upper > a.upper);
            }
        }
    }
}

#[test]
fn config_hash_tracks_config() {
    let a = tiny(None).hash().unwrap();
    assert_eq!(a, tiny(Some(Path::new("elsewhere"))).hash().unwrap());
    let mut c = tiny(None);
    c.seeds.calib += 1;
    assert_ne!(a, c.hash().unwrap());
    let mut c = tiny(None);
    c.delta = 0.91;
    assert_ne!(a, c.hash().unwrap());
}

fn flowpipe_bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flowpipe"));
    c.arg("--quiet");
    c
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> String {
    let p = dir.join("cfg.json");
    io::write_json(&p, cfg).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn cli_pipeline_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(None);
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    let status = flowpipe_bin()
        .args([
            "pipeline",
            "--config",
            &path,
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report: ValidationReport = io::read_json(&out.join("report.json")).unwrap();
    assert_eq!(report, run_pipeline(&cfg).unwrap().report);
}

#[test]
fn cli_staged_run_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let path = write_config(dir.path(), &tiny(None));
    let run = |args: &[&str]| flowpipe_bin().args(args).output().unwrap();

    for (split, file) in [("train", "train.csv"), ("calib", "calib.csv")] {
        let o = run(&[
            "simulate",
            "--config",
            &path,
            "--split",
            split,
            "--out",
            &d(file),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&[
        "train",
        "--config",
        &path,
        "--data",
        &d("train.csv"),
        "--out",
        &d("model.json"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[
        "calibrate",
        "--config",
        &path,
        "--model",
        &d("model.json"),
        "--data",
        &d("calib.csv"),
        "--out",
        &d("cal"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("cal/robust_quantile.json").exists());

    // calibrating on the training data is refused
    let o = run(&[
        "calibrate",
        "--config",
        &path,
        "--model",
        &d("model.json"),
        "--data",
        &d("train.csv"),
        "--out",
        &d("bad"),
    ]);
    assert_eq!(o.status.code(), Some(1));

    // too little calibration data for the requested shift radius
    let mut infeasible = tiny(None);
    infeasible.delta = 0.77;
    infeasible.divergence = DivergenceSpec::tv(0.225);
    infeasible.sizes.calib = 300;
    let p2 = dir.path().join("infeasible.json");
    io::write_json(&p2, &infeasible).unwrap();
    let o = run(&["pipeline", "--config", p2.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("399"));

    let o = run(&["min-calib", "--delta", "0.77", "--tau", "0.225"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("200") && text.contains("399"), "{text}");

    // an output path below a regular file cannot be created
    fs::write(dir.path().join("blocker"), b"").unwrap();
    let o = run(&["simulate", "--config", &path, "--out", &d("blocker/x.csv")]);
    assert_eq!(o.status.code(), Some(4));

    let o = run(&["pipeline", "--config", &d("missing.json")]);
    assert_ne!(o.status.code(), Some(0));
}
