//! Library side of the `bmim` command: configuration, argument parsing and
//! the five subcommands. Every output is written through a temp file and a
//! rename, and every file is a pure function of (data, configuration).

pub mod args;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use bmim_core::chain_io::{load_chain, save_chain, write_atomic, write_chain_csv, FORMAT_VERSION};
use bmim_core::comparators::qgc_fit_with;
use bmim_core::posterior::{compute_pips, indexwise_curve, interaction_grid, overall_contrast, Contrast, Curve};
use bmim_core::simulation::{
    aggregate, fit_and_predict, kfold_cv, run_simulation, write_table_csv, MethodSettings, SimulationConfig,
};
use bmim_core::{named_configuration, run_chain, standardize, Dataset, MethodKind, PosteriorChain, StandardizationRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{file_hash, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] bmim_core::Error),
}

impl CliError {
    /// 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub const MANIFEST: &str = "manifest.json";
pub const CHAIN: &str = "chain.bin";
pub const METADATA: &str = "fit.json";

/// What a fit depended on. Rerunning `fit` with the stored configuration
/// against data with the same hash reproduces every output byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub chain_format: u32,
    pub method: MethodKind,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad manifest {}: {e}", path.display())))
    }
}

/// Data-facing facts about a fit that the chain itself does not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub method: MethodKind,
    pub outcome: String,
    pub exposures: Vec<String>,
    pub covariates: Vec<String>,
    pub n: usize,
    pub groups: Option<String>,
    pub standardization: Option<StandardizationRecord>,
    pub draws: usize,
}

/// Hash of the configuration fields a fit depends on. Output-only settings
/// (summary, cv, simulate, paths) are left out so changing them does not
/// mark a chain stale.
pub fn fit_hash(cfg: &RunConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        method: MethodKind,
        groups: &'a Option<String>,
        outcome: &'a str,
        exposures: &'a Option<Vec<String>>,
        covariates: &'a [String],
        standardize: bool,
        kernel: bmim_core::KernelConfig,
        qgc: bmim_core::comparators::QgcOptions,
        hyper: bmim_core::Hyperparameters,
        sampler: &'a bmim_core::SamplerSettings,
    }
    let key = Key {
        method: cfg.method,
        groups: &cfg.groups,
        outcome: &cfg.outcome,
        exposures: &cfg.exposures,
        covariates: &cfg.covariates,
        standardize: cfg.standardize,
        kernel: cfg.kernel,
        qgc: cfg.qgc,
        hyper: cfg.hyper,
        sampler: &cfg.sampler,
    };
    hex::encode(Sha256::digest(serde_json::to_vec(&key).expect("key serializes")))
}

/// The dataset as fitted: exposures standardized when configured.
pub struct Prepared {
    pub data: Dataset,
    pub record: Option<StandardizationRecord>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let raw = Dataset::from_csv(cfg.data_path()?, &cfg.roles())?;
    if !cfg.standardize {
        return Ok(Prepared { data: raw, record: None });
    }
    let (x, record) = standardize(raw.x())?;
    Ok(Prepared { data: raw.with_exposures(x)?, record: Some(record) })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> bmim_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn write_out(dir: &Path, name: &str, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    write_atomic(&path, bytes)?;
    written.push(path);
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("output serializes");
    v.push(b'\n');
    v
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

/// Fits the configured method and writes the chain (or QGC fit), metadata,
/// weight table and manifest. Returns the paths written.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let data = &prepared.data;
    let out = &cfg.out;
    ensure_dir(out)?;
    let mut written = Vec::new();

    let draws = if cfg.method == MethodKind::Qgc {
        let fit = qgc_fit_with(data, &cfg.qgc)?;
        println!("qgc psi: {}", fit.report());
        write_out(out, "qgc.json", &json_bytes(&fit), &mut written)?;
        write_out(out, "weights.csv", &csv_bytes(|b| fit.write_csv(b))?, &mut written)?;
        0
    } else {
        let (spec, kernel) =
            named_configuration(cfg.method, data.p(), cfg.index_spec(data.p())?.as_ref(), cfg.kernel)?;
        log::info!(
            "fitting {} with {} indices, {} chains of {} iterations",
            cfg.method,
            spec.num_indices(),
            cfg.sampler.chains,
            cfg.sampler.iterations
        );
        let chain = run_chain(data, &spec, kernel, &cfg.hyper, &cfg.sampler)?;
        for log in &chain.acceptance {
            log::info!("chain {}: {:?}", log.chain, log.overall);
        }
        let path = out.join(CHAIN);
        save_chain(&path, &chain)?;
        written.push(path);
        let weights = compute_pips(&chain, Some(data.exposure_names()))?;
        write_out(out, "weights.csv", &csv_bytes(|b| weights.write_csv(b))?, &mut written)?;
        if cfg.summary.export_csv {
            let bytes = csv_bytes(|b| write_chain_csv(&chain, data.exposure_names(), b))?;
            write_out(out, "chain.csv", &bytes, &mut written)?;
        }
        chain.draws.len()
    };

    let meta = FitMetadata {
        method: cfg.method,
        outcome: data.outcome_name().to_string(),
        exposures: data.exposure_names().to_vec(),
        covariates: data.covariate_names().to_vec(),
        n: data.n(),
        groups: cfg.groups.clone(),
        standardization: prepared.record,
        draws,
    };
    write_out(out, METADATA, &json_bytes(&meta), &mut written)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        chain_format: FORMAT_VERSION,
        method: cfg.method,
        seed: cfg.sampler.seed,
        config_hash: fit_hash(cfg),
        data_hash: file_hash(cfg.data_path()?)?,
        config: cfg.clone(),
    };
    write_out(out, MANIFEST, &json_bytes(&manifest), &mut written)?;
    Ok(written)
}

/// Compares the stored manifest with the current configuration and data.
/// Each mismatch is logged as a warning and returned.
pub fn check_manifest(cfg: &RunConfig) -> Result<Vec<String>> {
    let path = cfg.out.join(MANIFEST);
    let mut warnings = Vec::new();
    if !path.exists() {
        warnings.push(format!("no manifest at {}; cannot check the fit is current", path.display()));
    } else {
        let m = Manifest::load(&path)?;
        if m.config_hash != fit_hash(cfg) {
            warnings.push("configuration differs from the one the chain was fitted with".into());
        }
        if m.data_hash != file_hash(cfg.data_path()?)? {
            warnings.push("data file changed since the chain was fitted".into());
        }
    }
    for w in &warnings {
        log::warn!("stale fit: {w}");
    }
    Ok(warnings)
}

fn load_fitted(cfg: &RunConfig) -> Result<(Prepared, PosteriorChain)> {
    cfg.validate()?;
    if cfg.method == MethodKind::Qgc {
        return Err(CliError::Config("qgc fits have no chain to summarize; see qgc.json".into()));
    }
    let path = cfg.out.join(CHAIN);
    if !path.exists() {
        return Err(CliError::Config(format!("chain file {} not found; run `bmim fit` first", path.display())));
    }
    check_manifest(cfg)?;
    let prepared = prepare(cfg)?;
    let chain = load_chain(&path)?;
    Ok((prepared, chain))
}

/// Weight table plus one curve file per index that was ever included.
pub fn cmd_summarize(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (prepared, chain) = load_fitted(cfg)?;
    let data = &prepared.data;
    let mut written = Vec::new();
    let weights = compute_pips(&chain, Some(data.exposure_names()))?;
    write_out(&cfg.out, "weights.csv", &csv_bytes(|b| weights.write_csv(b))?, &mut written)?;
    for m in 0..chain.spec.num_indices() {
        match indexwise_curve(&chain, data, m, &cfg.summary.curves) {
            Ok(curve) => {
                let bytes = curve_bytes(std::slice::from_ref(&curve))?;
                write_out(&cfg.out, &format!("curve_index{}.csv", m + 1), &bytes, &mut written)?;
            }
            Err(bmim_core::Error::UndefinedCurve { index }) => {
                log::warn!("index {index} was never included; no curve written");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(written)
}

fn curve_bytes(curves: &[Curve]) -> Result<Vec<u8>> {
    csv_bytes(|b| {
        let mut out = csv::Writer::from_writer(b);
        out.write_record(Curve::CSV_HEADER)?;
        for c in curves {
            c.write_csv_rows(&mut out)?;
        }
        out.flush()?;
        Ok(())
    })
}

fn contrast_bytes(rows: &[(String, Contrast)], labelled: bool) -> Result<Vec<u8>> {
    csv_bytes(|b| {
        let mut out = csv::Writer::from_writer(b);
        let mut header = vec!["estimate", "sd", "lower", "upper"];
        if labelled {
            header.insert(0, "index");
        }
        out.write_record(&header)?;
        for (label, c) in rows {
            let mut rec = vec![c.estimate.to_string(), c.sd.to_string(), c.lower.to_string(), c.upper.to_string()];
            if labelled {
                rec.insert(0, label.clone());
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    })
}

/// Overall contrast, optional per-index contrasts and interaction grids for
/// every ordered pair of indices.
pub fn cmd_predict(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (prepared, chain) = load_fitted(cfg)?;
    let data = &prepared.data;
    let s = &cfg.summary;
    let level = s.curves.predict.level;
    let mut written = Vec::new();

    let overall = overall_contrast(&chain, data, s.contrast_hi, s.contrast_lo, None, level)?;
    println!("contrast q{} vs q{}: {overall}", s.contrast_hi, s.contrast_lo);
    write_out(&cfg.out, "contrast.csv", &contrast_bytes(&[("all".into(), overall)], false)?, &mut written)?;

    let m_count = chain.spec.num_indices();
    if s.index_contrasts && m_count > 1 {
        let rows = (0..m_count)
            .map(|m| {
                let c = overall_contrast(&chain, data, s.contrast_hi, s.contrast_lo, Some(m), level)?;
                Ok(((m + 1).to_string(), c))
            })
            .collect::<Result<Vec<_>>>()?;
        write_out(&cfg.out, "contrast_indices.csv", &contrast_bytes(&rows, true)?, &mut written)?;
    }

    if m_count > 1 {
        let mut curves = Vec::new();
        for m in 0..m_count {
            for other in (0..m_count).filter(|&o| o != m) {
                match interaction_grid(&chain, data, m, other, &s.interaction_percentiles, &s.curves) {
                    Ok(c) => curves.extend(c),
                    Err(bmim_core::Error::UndefinedCurve { index }) => {
                        log::warn!("index {index} was never included; skipping its interaction curves");
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        write_out(&cfg.out, "interactions.csv", &curve_bytes(&curves)?, &mut written)?;
    }
    Ok(written)
}

fn method_settings(cfg: &RunConfig, p: usize) -> Result<MethodSettings> {
    Ok(MethodSettings {
        kernel: cfg.kernel,
        groups: cfg.index_spec(p)?,
        hyper: cfg.hyper,
        sampler: cfg.sampler.clone(),
        qgc: cfg.qgc,
    })
}

/// K-fold CV-MSE of `y` for each configured method. Exposures are
/// standardized within each training fold.
pub fn cmd_cv(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = Dataset::from_csv(cfg.data_path()?, &cfg.roles())?;
    let settings = method_settings(cfg, data.p())?;
    let methods = if cfg.cv.methods.is_empty() { vec![cfg.method] } else { cfg.cv.methods.clone() };
    ensure_dir(&cfg.out)?;
    let mut rows = Vec::new();
    for method in methods {
        let mse = kfold_cv(&data, cfg.cv.folds, cfg.sampler.seed, |tr, te| {
            Ok(fit_and_predict(method, tr, te.x().view(), te.z().view(), &settings)?.y)
        })?;
        println!("{method}: CV-MSE {mse:.4}");
        rows.push((method, mse));
    }
    let bytes = csv_bytes(|b| {
        let mut out = csv::Writer::from_writer(b);
        out.write_record(["method", "folds", "cv_mse"])?;
        for (m, mse) in &rows {
            out.write_record([m.to_string(), cfg.cv.folds.to_string(), mse.to_string()])?;
        }
        out.flush()?;
        Ok(())
    })?;
    let mut written = Vec::new();
    write_out(&cfg.out, "cv.csv", &bytes, &mut written)?;
    Ok(written)
}

/// Default grouping for the simulated 8/2/8 exposure blocks.
pub const SIMULATION_GROUPS: &str = "1-8;9-10;11-18";

/// Runs the simulation study and writes one metrics row per scenario and
/// method. The sampler seed doubles as the master seed for data generation.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let sim = &cfg.simulate;
    if sim.scenarios.is_empty() || sim.methods.is_empty() {
        return Err(CliError::Config("simulate needs at least one scenario and one method".into()));
    }
    cfg.hyper.validate()?;
    cfg.sampler.validate()?;
    let p: usize = bmim_core::simulation::BLOCK_SIZES.iter().sum();
    let groups = cfg.groups.as_deref().unwrap_or(SIMULATION_GROUPS);
    let mut settings = method_settings(cfg, p)?;
    settings.groups = Some(bmim_core::IndexSpec::parse(groups, p)?);
    ensure_dir(&cfg.out)?;

    let mut rows = Vec::new();
    for &scenario in &sim.scenarios {
        let mut sc = SimulationConfig::new(scenario, settings.clone());
        sc.sigma = sim.sigma;
        sc.replicates = sim.replicates;
        sc.n_total = sim.n_total;
        sc.n_train = sim.n_train;
        sc.seed = cfg.sampler.seed;
        sc.methods = sim.methods.clone();
        sc.cv_folds = sim.cv_folds;
        let results = run_simulation(&sc)?;
        for row in aggregate(&sc, &results) {
            println!(
                "scenario {} {}: MSE(h) {:.4} (sd {:.4}), coverage {:.3}",
                row.scenario, row.method, row.mse_h_mean, row.mse_h_sd, row.coverage
            );
            rows.push(row);
        }
    }
    let mut written = Vec::new();
    write_out(&cfg.out, "simulation.csv", &csv_bytes(|b| write_table_csv(&rows, b))?, &mut written)?;
    Ok(written)
}
