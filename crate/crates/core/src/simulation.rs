//! Synthetic mixture scenarios, per-method fitting and metric collection.
//!
//! Exposures are 18 correlated normals in blocks of 8/2/8. Scenario A puts
//! one S-shaped function on a single weighted index of all exposures;
//! scenario B uses three separately standardized indices with a unimodal
//! effect, a null effect and a sigmoid effect plus an interaction between
//! the first and third. `ALinear` replaces the S-curve of A by the identity.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparators::{named_configuration, qgc_fit_with, MethodKind, QgcOptions};
use crate::data::{standardize, Dataset, IndexSpec};
use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::likelihood::Hyperparameters;
use crate::posterior::{predict_surface, PredictOptions, SurfaceEstimate};
use crate::sampler::{run_chain, SamplerSettings};
use crate::stats::{self, Z_975};

pub const BLOCK_SIZES: [usize; 3] = [8, 2, 8];
pub const WITHIN_CORRELATION: f64 = 0.6;
pub const BETWEEN_CORRELATION: f64 = 0.2;
/// Effects of (age, age², male, BMI 25–30, BMI 30+).
pub const COVARIATE_EFFECTS: [f64; 5] = [-0.43, 0.00, -0.25, 0.12, 0.08];
pub const COVARIATE_NAMES: [&str; 5] = ["age", "age_sq", "male", "bmi_25_30", "bmi_30_plus"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    A,
    B,
    ALinear,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::A => "A",
            ScenarioKind::B => "B",
            ScenarioKind::ALinear => "A-linear",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(ScenarioKind::A),
            "b" => Ok(ScenarioKind::B),
            "a-linear" | "alinear" | "a_linear" => Ok(ScenarioKind::ALinear),
            other => Err(Error::InvalidArgument(format!("unknown scenario {other:?}"))),
        }
    }
}

pub fn h_a(u: f64) -> f64 {
    1.5 / (1.0 + (-2.0 * u).exp()) - 0.75
}

/// Centered so its mean under a standard normal index is zero.
pub fn h_b1(u: f64) -> f64 {
    1.2 * (-0.5 * u * u).exp() - 1.2 * std::f64::consts::FRAC_1_SQRT_2
}

pub fn h_b2(_u: f64) -> f64 {
    0.0
}

pub fn h_b3(u: f64) -> f64 {
    1.2 * u.tanh()
}

/// Generating weights of the three exposure blocks.
pub fn scenario_weights() -> [Vec<f64>; 3] {
    [(1..=8).rev().map(f64::from).collect(), vec![1.0, 1.0], vec![-2.0; 8]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub kind: ScenarioKind,
    pub h: Vec<f64>,
    /// Weights per block.
    pub weights: Vec<Vec<f64>>,
    /// Standardized index values (N×1 for A, N×3 for B).
    pub indices: Array2<f64>,
    pub sigma: f64,
    /// Covariate effects including the zero intercept.
    pub gamma: Vec<f64>,
}

/// Block-correlated standard normal exposures.
pub fn correlated_exposures<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let p: usize = BLOCK_SIZES.iter().sum();
    let block: Vec<usize> = BLOCK_SIZES.iter().enumerate().flat_map(|(b, &s)| vec![b; s]).collect();
    let cov = Array2::from_shape_fn((p, p), |(i, j)| {
        if i == j {
            1.0
        } else if block[i] == block[j] {
            WITHIN_CORRELATION
        } else {
            BETWEEN_CORRELATION
        }
    });
    let l = lower_cholesky(&cov);
    let z = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    z.dot(&l.t())
}

fn lower_cholesky(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let d = a[[j, j]] - (0..j).map(|k| l[[j, k]].powi(2)).sum::<f64>();
        l[[j, j]] = d.sqrt();
        for i in j + 1..n {
            let v = a[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
            l[[i, j]] = v / l[[j, j]];
        }
    }
    l
}

/// Age (standardized), its square, sex and two BMI category indicators.
pub fn simulated_covariates<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut z = Array2::zeros((n, 5));
    for i in 0..n {
        let age: f64 = rng.sample(StandardNormal);
        z[[i, 0]] = age;
        z[[i, 1]] = age * age;
        z[[i, 2]] = f64::from(rng.random::<f64>() < 0.5);
        let u: f64 = rng.random();
        z[[i, 3]] = f64::from((0.35..0.70).contains(&u));
        z[[i, 4]] = f64::from(u >= 0.70);
    }
    z
}

fn standardized(v: Array1<f64>) -> Array1<f64> {
    let xs = v.to_vec();
    let (m, sd) = (stats::mean(&xs), stats::sample_sd(&xs));
    v.mapv(|a| (a - m) / sd)
}

/// Outcomes `y = h + Zγ + σε` for the given exposures (N×18) and covariates
/// (N×5, without intercept). The returned dataset carries an intercept.
pub fn generate_scenario(
    kind: ScenarioKind,
    x: &Array2<f64>,
    covariates: &Array2<f64>,
    sigma: f64,
    seed: u64,
) -> Result<(Dataset, ScenarioTruth)> {
    let p: usize = BLOCK_SIZES.iter().sum();
    if x.ncols() != p {
        return Err(Error::Dimension(format!("scenarios need {p} exposures, got {}", x.ncols())));
    }
    if covariates.dim() != (x.nrows(), COVARIATE_EFFECTS.len()) {
        return Err(Error::Dimension("covariates must be N×5".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("σ must be positive".into()));
    }
    let n = x.nrows();
    let w = scenario_weights();
    let blocks = [s![.., 0..8], s![.., 8..10], s![.., 10..18]];
    let (h, indices) = match kind {
        ScenarioKind::A | ScenarioKind::ALinear => {
            let all: Vec<f64> = w.iter().flatten().copied().collect();
            let u = standardized(x.dot(&Array1::from(all)));
            let f = if kind == ScenarioKind::A { h_a } else { |v: f64| v };
            (u.mapv(f), u.insert_axis(ndarray::Axis(1)))
        }
        ScenarioKind::B => {
            let mut idx = Array2::zeros((n, 3));
            for b in 0..3 {
                let u = standardized(x.slice(blocks[b]).dot(&Array1::from(w[b].clone())));
                idx.column_mut(b).assign(&u);
            }
            let h = idx
                .rows()
                .into_iter()
                .map(|r| {
                    let (b1, b3) = (h_b1(r[0]), h_b3(r[2]));
                    b1 + h_b2(r[1]) + b3 + 0.5 * b1 * b3
                })
                .collect::<Array1<f64>>();
            (h, idx)
        }
    };
    let gamma: Vec<f64> = std::iter::once(0.0).chain(COVARIATE_EFFECTS).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zg = covariates.dot(&Array1::from(COVARIATE_EFFECTS.to_vec()));
    let y: Array1<f64> = (0..n)
        .map(|i| h[i] + zg[i] + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let cov_names = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    let data = Dataset::with_intercept(y, x.clone(), covariates.clone(), names, cov_names)?;
    let truth = ScenarioTruth {
        kind,
        h: h.to_vec(),
        weights: w.to_vec(),
        indices,
        sigma,
        gamma,
    };
    Ok((data, truth))
}

/// Point estimates and 95% bands for `h` at evaluation rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEstimate {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl From<&SurfaceEstimate> for BandEstimate {
    fn from(s: &SurfaceEstimate) -> Self {
        Self { mean: s.mean.clone(), sd: s.sd.clone(), lower: s.lower.clone(), upper: s.upper.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub mse_h: f64,
    pub mse_y: f64,
    pub cv_mse: Option<f64>,
    pub coverage: f64,
    pub avg_se: f64,
}

pub fn evaluate_fit(true_h: &[f64], band: &BandEstimate, y_test: &[f64], y_pred: &[f64]) -> Result<FitMetrics> {
    let n = true_h.len();
    if band.mean.len() != n || band.lower.len() != n || band.upper.len() != n || band.sd.len() != n {
        return Err(Error::Dimension("estimate and truth lengths differ".into()));
    }
    if y_test.len() != y_pred.len() {
        return Err(Error::Dimension("held-out outcomes and predictions differ in length".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no evaluation rows".into()));
    }
    let mse_h = true_h.iter().zip(&band.mean).map(|(t, m)| (t - m).powi(2)).sum::<f64>() / n as f64;
    let covered = (0..n).filter(|&i| band.lower[i] <= true_h[i] && true_h[i] <= band.upper[i]).count();
    let mse_y = if y_test.is_empty() {
        0.0
    } else {
        y_test.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y_test.len() as f64
    };
    Ok(FitMetrics {
        mse_h,
        mse_y,
        cv_mse: None,
        coverage: covered as f64 / n as f64,
        avg_se: stats::mean(&band.sd),
    })
}

/// Pooled squared prediction error over `k` folds formed by a seeded
/// shuffle. `fit_predict(train, test)` returns predictions for `test`.
pub fn kfold_cv<F>(data: &Dataset, k: usize, seed: u64, fit_predict: F) -> Result<f64>
where
    F: Fn(&Dataset, &Dataset) -> Result<Vec<f64>>,
{
    let n = data.n();
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("fold count {k} must lie in [2, {n}]")));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut total = 0.0;
    for f in 0..k {
        let test: Vec<usize> = rows.iter().enumerate().filter(|(i, _)| i % k == f).map(|(_, &r)| r).collect();
        let train: Vec<usize> = rows.iter().enumerate().filter(|(i, _)| i % k != f).map(|(_, &r)| r).collect();
        let (tr, te) = (data.subset(&train)?, data.subset(&test)?);
        let pred = fit_predict(&tr, &te)?;
        if pred.len() != te.n() {
            return Err(Error::Dimension("fold predictions have the wrong length".into()));
        }
        total += te.y().iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / n as f64)
}

/// Everything needed to fit one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub kernel: KernelConfig,
    pub groups: Option<IndexSpec>,
    pub hyper: Hyperparameters,
    pub sampler: SamplerSettings,
    pub qgc: QgcOptions,
}

/// Predictions of `h` (with intercept) and of `y` at new rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodPrediction {
    pub h: BandEstimate,
    pub y: Vec<f64>,
}

/// Fits `method` on `train` (exposures standardized with the training
/// means/sds) and predicts at `x_new`/`z_new` (raw exposures, covariates
/// with intercept column).
pub fn fit_and_predict(
    method: MethodKind,
    train: &Dataset,
    x_new: ArrayView2<f64>,
    z_new: ArrayView2<f64>,
    settings: &MethodSettings,
) -> Result<MethodPrediction> {
    let (x_std, record) = standardize(train.x())?;
    let train = train.with_exposures(x_std)?;
    let x_new = record.apply(&x_new.to_owned())?;
    match method {
        MethodKind::Qgc => {
            let fit = qgc_fit_with(&train, &settings.qgc)?;
            let (mean, sd) = fit.predict_h(x_new.view())?;
            let y = fit.predict(x_new.view(), z_new)?;
            let lower = mean.iter().zip(&sd).map(|(m, s)| m - Z_975 * s).collect();
            let upper = mean.iter().zip(&sd).map(|(m, s)| m + Z_975 * s).collect();
            Ok(MethodPrediction { h: BandEstimate { mean, sd, lower, upper }, y })
        }
        _ => {
            let (spec, kernel) = named_configuration(method, train.p(), settings.groups.as_ref(), settings.kernel)?;
            let chain = run_chain(&train, &spec, kernel, &settings.hyper, &settings.sampler)?;
            let opts = PredictOptions { include_intercept: train.has_intercept(), ..Default::default() };
            let surface = predict_surface(&chain, &train, x_new.view(), &opts)?;
            let q = train.q();
            let gamma_bar: Vec<f64> = (0..q)
                .map(|j| stats::mean(&chain.draws.iter().map(|d| d.gamma[j]).collect::<Vec<_>>()))
                .collect();
            // The intercept is already part of the surface.
            let start = usize::from(train.has_intercept());
            let y = (0..x_new.nrows())
                .map(|i| surface.mean[i] + (start..q).map(|j| z_new[[i, j]] * gamma_bar[j]).sum::<f64>())
                .collect();
            Ok(MethodPrediction { h: BandEstimate::from(&surface), y })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub scenario: ScenarioKind,
    pub sigma: f64,
    pub n_total: usize,
    pub n_train: usize,
    pub replicates: usize,
    pub seed: u64,
    pub methods: Vec<MethodKind>,
    /// Folds for CV-MSE on the training rows; `None` skips it.
    pub cv_folds: Option<usize>,
    pub settings: MethodSettings,
}

impl SimulationConfig {
    pub fn new(scenario: ScenarioKind, settings: MethodSettings) -> Self {
        Self {
            scenario,
            sigma: 0.5,
            n_total: 500,
            n_train: 300,
            replicates: 20,
            seed: 2024,
            methods: MethodKind::ALL.to_vec(),
            cv_folds: None,
            settings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub method: MethodKind,
    pub metrics: FitMetrics,
}

fn replicate_seed(master: u64, replicate: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(replicate as u64 + 1);
    rng.random()
}

/// Generates one replicate and fits every configured method.
pub fn run_replicate(cfg: &SimulationConfig, replicate: usize) -> Result<Vec<ReplicateResult>> {
    if cfg.n_train == 0 || cfg.n_train >= cfg.n_total {
        return Err(Error::InvalidArgument("training size must lie strictly between 0 and the total".into()));
    }
    let seed = replicate_seed(cfg.seed, replicate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = correlated_exposures(cfg.n_total, &mut rng);
    let cov = simulated_covariates(cfg.n_total, &mut rng);
    let (data, truth) = generate_scenario(cfg.scenario, &x, &cov, cfg.sigma, rng.random())?;
    let train_rows: Vec<usize> = (0..cfg.n_train).collect();
    let test_rows: Vec<usize> = (cfg.n_train..cfg.n_total).collect();
    let train = data.subset(&train_rows)?;
    let test = data.subset(&test_rows)?;
    let true_h = &truth.h[cfg.n_train..];

    let mut settings = cfg.settings.clone();
    settings.sampler.seed = rng.random();
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let pred = fit_and_predict(method, &train, test.x().view(), test.z().view(), &settings)?;
        let mut metrics = evaluate_fit(true_h, &pred.h, test.y().as_slice().expect("contiguous"), &pred.y)?;
        if let Some(k) = cfg.cv_folds {
            metrics.cv_mse = Some(kfold_cv(&train, k, seed, |tr, te| {
                Ok(fit_and_predict(method, tr, te.x().view(), te.z().view(), &settings)?.y)
            })?);
        }
        log::info!(
            "scenario {} replicate {replicate} {method}: MSE(h) {:.4}, coverage {:.3}",
            cfg.scenario,
            metrics.mse_h,
            metrics.coverage
        );
        out.push(ReplicateResult { replicate, method, metrics });
    }
    Ok(out)
}

pub fn run_simulation(cfg: &SimulationConfig) -> Result<Vec<ReplicateResult>> {
    let per: Vec<Result<Vec<ReplicateResult>>> =
        (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect();
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}

/// One Table-1-shaped row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub sigma: f64,
    pub scenario: ScenarioKind,
    pub method: MethodKind,
    pub mse_h_mean: f64,
    pub mse_h_sd: f64,
    pub se_h: f64,
    pub coverage: f64,
    pub mse_y_mean: f64,
    pub mse_y_sd: f64,
    pub cv_mse_mean: Option<f64>,
    pub cv_mse_sd: Option<f64>,
}

pub fn aggregate(cfg: &SimulationConfig, results: &[ReplicateResult]) -> Vec<TableRow> {
    cfg.methods
        .iter()
        .map(|&method| {
            let rows: Vec<&FitMetrics> =
                results.iter().filter(|r| r.method == method).map(|r| &r.metrics).collect();
            let col = |f: fn(&FitMetrics) -> f64| rows.iter().map(|m| f(m)).collect::<Vec<f64>>();
            let cv: Option<Vec<f64>> = rows.iter().map(|m| m.cv_mse).collect();
            let sd = |v: &[f64]| if v.len() > 1 { stats::sample_sd(v) } else { 0.0 };
            TableRow {
                sigma: cfg.sigma,
                scenario: cfg.scenario,
                method,
                mse_h_mean: stats::mean(&col(|m| m.mse_h)),
                mse_h_sd: sd(&col(|m| m.mse_h)),
                se_h: stats::mean(&col(|m| m.avg_se)),
                coverage: stats::mean(&col(|m| m.coverage)),
                mse_y_mean: stats::mean(&col(|m| m.mse_y)),
                mse_y_sd: sd(&col(|m| m.mse_y)),
                cv_mse_mean: cv.as_ref().filter(|v| !v.is_empty()).map(|v| stats::mean(v)),
                cv_mse_sd: cv.as_ref().filter(|v| !v.is_empty()).map(|v| sd(v)),
            }
        })
        .collect()
}

pub fn write_table_csv<W: std::io::Write>(rows: &[TableRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "sigma", "scenario", "method", "mse_h_mean", "mse_h_sd", "se_h", "coverage_h", "mse_y_mean", "mse_y_sd",
        "cv_mse_mean", "cv_mse_sd",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.sigma.to_string(),
            r.scenario.to_string(),
            r.method.to_string(),
            r.mse_h_mean.to_string(),
            r.mse_h_sd.to_string(),
            r.se_h.to_string(),
            r.coverage.to_string(),
            r.mse_y_mean.to_string(),
            r.mse_y_sd.to_string(),
            opt(r.cv_mse_mean),
            opt(r.cv_mse_sd),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_metric_case() {
        let band = BandEstimate {
            mean: vec![0.0, 1.0, 4.0],
            sd: vec![1.0; 3],
            lower: vec![-1.0, 0.0, 3.0],
            upper: vec![1.0, 2.0, 5.0],
        };
        let m = evaluate_fit(&[0.0, 1.0, 2.0], &band, &[], &[]).unwrap();
        assert!((m.mse_h - 4.0 / 3.0).abs() < 1e-15);
        assert!((m.coverage - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shape_functions() {
        assert_eq!(h_a(0.0), 0.0);
        assert!(h_a(5.0) > 0.7 && h_a(-5.0) < -0.7);
        assert_eq!(h_b3(0.0), 0.0);
        assert!(h_b1(0.0) > h_b1(2.0));
        assert_eq!(h_b2(3.0), 0.0);
    }

    #[test]
    fn cv_constant_outcome() {
        let n = 12;
        let y = Array1::from_elem(n, 3.0);
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let data = Dataset::with_intercept(y, x, Array2::zeros((n, 0)), vec!["x".into()], vec![]).unwrap();
        let cv = kfold_cv(&data, 4, 1, |_, te| Ok(vec![3.0; te.n()])).unwrap();
        assert_eq!(cv, 0.0);
        assert!(kfold_cv(&data, 1, 1, |_, te| Ok(vec![3.0; te.n()])).is_err());
    }
}
