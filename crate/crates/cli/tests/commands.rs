use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bmim_cli::args::Cli;
use bmim_cli::{check_manifest, cmd_cv, cmd_fit, cmd_predict, cmd_simulate, cmd_summarize, CliError, RunConfig};
use bmim_core::MethodKind;
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// y depends on x1 and x2 through a smooth curve; x3, x4 are noise.
fn write_data(dir: &Path, n: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut text = String::from("y,x1,x2,x3,x4,age\n");
    for _ in 0..n {
        let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let age: f64 = rng.random::<f64>();
        let y = (x[0] + 0.5 * x[1]).tanh() + 0.3 * age + 0.1 * (rng.random::<f64>() - 0.5);
        text.push_str(&format!("{y},{},{},{},{},{age}\n", x[0], x[1], x[2], x[3]));
    }
    let path = dir.join("data.csv");
    fs::write(&path, text).unwrap();
    path
}

fn small_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        data: Some(write_data(dir, 40)),
        out: dir.join("out"),
        groups: Some("1-2;3-4".into()),
        covariates: vec!["age".into()],
        ..Default::default()
    };
    cfg.sampler.iterations = 60;
    cfg.sampler.burn_in = 20;
    cfg.sampler.thin = 2;
    cfg.summary.curves.grid_size = 5;
    cfg
}

#[test]
fn fit_writes_chain_weights_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let written = cmd_fit(&cfg).unwrap();
    for name in ["chain.bin", "weights.csv", "fit.json", "manifest.json"] {
        assert!(written.contains(&cfg.out.join(name)), "{name} missing");
    }
    let weights = fs::read_to_string(cfg.out.join("weights.csv")).unwrap();
    assert_eq!(weights.lines().count(), 5);
    assert!(weights.lines().nth(1).unwrap().starts_with("1,x1,"));
    assert!(check_manifest(&cfg).unwrap().is_empty());
}

#[test]
fn refit_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_fit(&cfg).unwrap();
    let first = fs::read(cfg.out.join("chain.bin")).unwrap();
    let manifest = fs::read(cfg.out.join("manifest.json")).unwrap();
    fs::remove_dir_all(&cfg.out).unwrap();
    cmd_fit(&cfg).unwrap();
    assert_eq!(first, fs::read(cfg.out.join("chain.bin")).unwrap());
    assert_eq!(manifest, fs::read(cfg.out.join("manifest.json")).unwrap());
}

#[test]
fn summarize_and_predict_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_fit(&cfg).unwrap();
    let written = cmd_summarize(&cfg).unwrap();
    let curves: Vec<_> = written.iter().filter(|p| p.to_string_lossy().contains("curve_index")).collect();
    assert!(!curves.is_empty() && curves.len() <= 2);
    let text = fs::read_to_string(curves[0]).unwrap();
    assert_eq!(text.lines().next().unwrap(), "index,value,mean,lower,upper,fixed");
    assert_eq!(text.lines().count(), 6);

    cmd_predict(&cfg).unwrap();
    let contrast = fs::read_to_string(cfg.out.join("contrast.csv")).unwrap();
    let lines: Vec<&str> = contrast.lines().collect();
    assert_eq!(lines[0], "estimate,sd,lower,upper");
    assert_eq!(lines.len(), 2);
    let v: Vec<f64> = lines[1].split(',').map(|s| s.parse().unwrap()).collect();
    assert!(v[2] <= v[0] && v[0] <= v[3]);
}

#[test]
fn bsim_summary_has_one_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.method = MethodKind::Bsim;
    cmd_fit(&cfg).unwrap();
    let written = cmd_summarize(&cfg).unwrap();
    let n = written.iter().filter(|p| p.to_string_lossy().contains("curve_index")).count();
    assert_eq!(n, 1);
}

#[test]
fn changed_config_is_reported_stale() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_fit(&cfg).unwrap();
    cfg.sampler.seed = 99;
    let warnings = check_manifest(&cfg).unwrap();
    assert_eq!(warnings.len(), 1);
    // Output-only settings do not make a fit stale.
    cfg.sampler.seed = 1;
    cfg.summary.contrast_hi = 0.75;
    assert!(check_manifest(&cfg).unwrap().is_empty());
}

#[test]
fn summarize_without_chain_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let err = cmd_summarize(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(err.to_string().contains("chain.bin"));
}

#[test]
fn missing_outcome_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { outcome: "bmi".into(), ..small_config(dir.path()) };
    let err = cmd_fit(&cfg).unwrap_err();
    assert!(err.to_string().contains("\"bmi\""), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn qgc_fit_and_cv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.method = MethodKind::Qgc;
    cmd_fit(&cfg).unwrap();
    assert!(cfg.out.join("qgc.json").exists());
    assert!(!cfg.out.join("chain.bin").exists());

    cfg.cv.folds = 4;
    cfg.cv.methods = vec![MethodKind::Qgc, MethodKind::Bsim];
    cmd_cv(&cfg).unwrap();
    let cv = fs::read_to_string(cfg.out.join("cv.csv")).unwrap();
    let rows: Vec<&str> = cv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("qgc,4,") && rows[2].starts_with("bsim,4,"));
}

#[test]
fn simulate_writes_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.simulate.scenarios = vec![bmim_core::simulation::ScenarioKind::B];
    cfg.simulate.replicates = 1;
    cfg.simulate.n_total = 60;
    cfg.simulate.n_train = 40;
    cfg.simulate.methods = vec![MethodKind::Qgc, MethodKind::Bsim];
    cfg.groups = None;
    cmd_simulate(&cfg).unwrap();
    let text = fs::read_to_string(cfg.out.join("simulation.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "method = \"bkmr\"\n[sampler]\niterations = 500\nseed = 4\n").unwrap();
    let cli = Cli::try_parse_from([
        "bmim",
        "--config",
        path.to_str().unwrap(),
        "--iters",
        "80",
        "--degree",
        "2",
        "fit",
    ])
    .unwrap();
    let cfg = cli.resolve().unwrap();
    assert_eq!(cfg.method, MethodKind::Bkmr);
    assert_eq!(cfg.sampler.iterations, 80);
    assert_eq!(cfg.sampler.seed, 4);
    assert_eq!(cfg.kernel, bmim_core::KernelConfig::Polynomial { degree: 2 });
}

#[test]
fn manifest_rerun_reproduces_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_fit(&cfg).unwrap();
    let first = fs::read(cfg.out.join("chain.bin")).unwrap();
    let saved = dir.path().join("saved.json");
    fs::copy(cfg.out.join("manifest.json"), &saved).unwrap();
    fs::remove_dir_all(&cfg.out).unwrap();
    let cli = Cli::try_parse_from(["bmim", "fit", "--manifest", saved.to_str().unwrap()]).unwrap();
    cli.run().unwrap();
    assert_eq!(first, fs::read(cfg.out.join("chain.bin")).unwrap());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[sampler]\niteratons = 5\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bmim")).args(["--config", bad.to_str().unwrap(), "fit"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");

    let cfg = small_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_bmim"))
        .args(["--data", cfg.data.as_ref().unwrap().to_str().unwrap(), "--out"])
        .arg(&cfg.out)
        .args(["--method", "qgc", "fit"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("qgc psi: "));
}
