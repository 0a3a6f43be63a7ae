//! Quantile g-computation (a linear model on quantile-scored exposures) and
//! the named kernel-model configurations.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2};
use ndarray_linalg::{Diag, SolveTriangular, QR, UPLO};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, IndexSpec, QuantileCuts};
use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::stats::Z_975;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Qgc,
    Bsim,
    Bmim,
    Bkmr,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [MethodKind::Qgc, MethodKind::Bsim, MethodKind::Bmim, MethodKind::Bkmr];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Qgc => "qgc",
            MethodKind::Bsim => "bsim",
            MethodKind::Bmim => "bmim",
            MethodKind::Bkmr => "bkmr",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qgc" => Ok(MethodKind::Qgc),
            "bsim" => Ok(MethodKind::Bsim),
            "bmim" => Ok(MethodKind::Bmim),
            "bkmr" => Ok(MethodKind::Bkmr),
            other => Err(Error::InvalidArgument(format!(
                "unknown method {other:?} (expected qgc, bsim, bmim or bkmr)"
            ))),
        }
    }
}

/// Index grouping and kernel for a kernel-based method: `bsim` puts all
/// exposures in one index, `bkmr` gives each exposure its own index and
/// `bmim` uses `groups`.
pub fn named_configuration(
    kind: MethodKind,
    p: usize,
    groups: Option<&IndexSpec>,
    kernel: KernelConfig,
) -> Result<(IndexSpec, KernelConfig)> {
    if p == 0 {
        return Err(Error::IndexSpec("no exposures".into()));
    }
    let spec = match kind {
        MethodKind::Bsim => IndexSpec::single(p),
        MethodKind::Bkmr => IndexSpec::singletons(p),
        MethodKind::Bmim => {
            let g = groups.ok_or_else(|| Error::IndexSpec("bmim requires an index grouping".into()))?;
            crate::data::validate_index_spec(g, p)?;
            g.clone()
        }
        MethodKind::Qgc => {
            return Err(Error::InvalidArgument("qgc is not a kernel model".into()));
        }
    };
    Ok((spec, kernel))
}

/// Positive and negative proportion weights of a coefficient vector. A side
/// with no coefficients of its sign is entirely `None`.
pub fn qgc_weights(beta: &[f64]) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let pos: f64 = beta.iter().filter(|b| **b > 0.0).sum();
    let neg: f64 = beta.iter().filter(|b| **b < 0.0).sum();
    let side = |total: f64, keep: fn(f64) -> bool| -> Vec<Option<f64>> {
        beta.iter().map(|&b| (keep(b) && total != 0.0).then(|| b / total)).collect()
    };
    (side(pos, |b| b > 0.0), side(neg, |b| b < 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QgcOptions {
    /// Number of quantile bins.
    pub q: usize,
    /// Add squared score terms.
    pub quadratic: bool,
}

impl Default for QgcOptions {
    fn default() -> Self {
        Self { q: 4, quadratic: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgcFit {
    pub q: usize,
    pub quadratic: bool,
    pub exposure_names: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Intercept `α₀` (zero when the data carry no intercept column).
    pub intercept: f64,
    /// Coefficients on the linear quantile scores.
    pub beta: Vec<f64>,
    pub beta_se: Vec<f64>,
    /// Coefficients on squared scores, when requested.
    pub beta_quadratic: Option<Vec<f64>>,
    /// All covariate coefficients including the intercept.
    pub covariate_coef: Vec<f64>,
    pub psi: f64,
    pub psi_se: f64,
    pub psi_lower: f64,
    pub psi_upper: f64,
    pub positive: Vec<Option<f64>>,
    pub negative: Vec<Option<f64>>,
    pub residual_var: f64,
    /// Cut points per exposure, for scoring new rows.
    pub cuts: Vec<QuantileCuts>,
    /// Coefficient covariance in design order `[Z | scores | squares]`.
    pub covariance: Array2<f64>,
}

pub fn qgc_fit(data: &Dataset, q: usize) -> Result<QgcFit> {
    qgc_fit_with(data, &QgcOptions { q, quadratic: false })
}

pub fn qgc_fit_with(data: &Dataset, opts: &QgcOptions) -> Result<QgcFit> {
    if opts.q < 2 {
        return Err(Error::InvalidArgument(format!("q = {} must be at least 2", opts.q)));
    }
    if opts.quadratic {
        log::warn!("quadratic score terms requested: reported weights cover the linear terms only");
    }
    let x = data.x();
    let cuts = x
        .columns()
        .into_iter()
        .map(|c| QuantileCuts::fit(c, opts.q))
        .collect::<Result<Vec<_>>>()?;
    let scores = score_matrix(&cuts, x.view());
    let design = qgc_design(data.z().view(), &scores, opts.quadratic);
    let (n, k) = design.dim();
    if n <= k {
        return Err(Error::Dataset(format!("{n} observations cannot support {k} coefficients")));
    }
    let (coef, r) = least_squares(&design, data.y())?;
    let resid = data.y() - &design.dot(&coef);
    let residual_var = resid.dot(&resid) / (n - k) as f64;
    let rinv = r
        .solve_triangular(UPLO::Upper, Diag::NonUnit, &Array2::eye(k))
        .map_err(|_| Error::RankDeficient)?;
    let covariance = rinv.dot(&rinv.t()) * residual_var;

    let q_cov = data.q();
    let p = data.p();
    let beta = coef.slice(s![q_cov..q_cov + p]).to_vec();
    let beta_se = (q_cov..q_cov + p).map(|j| covariance[[j, j]].sqrt()).collect();
    let block = covariance.slice(s![q_cov..q_cov + p, q_cov..q_cov + p]);
    let psi: f64 = beta.iter().sum();
    let psi_se = block.sum().max(0.0).sqrt();
    let (positive, negative) = qgc_weights(&beta);
    Ok(QgcFit {
        q: opts.q,
        quadratic: opts.quadratic,
        exposure_names: data.exposure_names().to_vec(),
        covariate_names: data.covariate_names().to_vec(),
        intercept: if data.has_intercept() { coef[0] } else { 0.0 },
        beta,
        beta_se,
        beta_quadratic: opts.quadratic.then(|| coef.slice(s![q_cov + p..]).to_vec()),
        covariate_coef: coef.slice(s![..q_cov]).to_vec(),
        psi,
        psi_se,
        psi_lower: psi - Z_975 * psi_se,
        psi_upper: psi + Z_975 * psi_se,
        positive,
        negative,
        residual_var,
        cuts,
        covariance,
    })
}

fn score_matrix(cuts: &[QuantileCuts], x: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(x.dim(), |(i, c)| cuts[c].score(x[[i, c]]) as f64)
}

fn qgc_design(z: ArrayView2<f64>, scores: &Array2<f64>, quadratic: bool) -> Array2<f64> {
    let n = z.nrows();
    let (qz, p) = (z.ncols(), scores.ncols());
    let k = qz + p * if quadratic { 2 } else { 1 };
    let mut d = Array2::zeros((n, k));
    d.slice_mut(s![.., ..qz]).assign(&z);
    d.slice_mut(s![.., qz..qz + p]).assign(scores);
    if quadratic {
        d.slice_mut(s![.., qz + p..]).assign(&scores.mapv(|v| v * v));
    }
    d
}

/// OLS by QR. Returns the coefficients and the triangular factor `R`.
fn least_squares(design: &Array2<f64>, y: &Array1<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (qm, r) = design.qr().map_err(|_| Error::RankDeficient)?;
    for j in 0..r.ncols() {
        let scale = design.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        if scale == 0.0 || r[[j, j]].abs() <= 1e-10 * scale {
            return Err(Error::RankDeficient);
        }
    }
    let qty = qm.t().dot(y);
    let coef = r
        .solve_triangular(UPLO::Upper, Diag::NonUnit, &qty)
        .map_err(|_| Error::RankDeficient)?;
    Ok((coef, r))
}

impl QgcFit {
    /// Exposure-only part of the fit, `α₀ + Σ β_p s_p (+ Σ β²_p s_p²)`, with
    /// its standard error, at new exposure rows scored with the training
    /// cut points.
    pub fn predict_h(&self, x_new: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.beta.len();
        if x_new.ncols() != p {
            return Err(Error::Dimension(format!("expected {p} exposure columns, got {}", x_new.ncols())));
        }
        let qz = self.covariate_coef.len();
        let k = self.covariance.nrows();
        let scores = score_matrix(&self.cuts, x_new);
        let mut est = Vec::with_capacity(x_new.nrows());
        let mut se = Vec::with_capacity(x_new.nrows());
        let has_intercept = self.covariate_names.first().is_some_and(|n| n == crate::data::INTERCEPT);
        for row in scores.rows() {
            let mut a = Array1::zeros(k);
            if has_intercept {
                a[0] = 1.0;
            }
            a.slice_mut(s![qz..qz + p]).assign(&row);
            if self.quadratic {
                a.slice_mut(s![qz + p..]).assign(&row.mapv(|v| v * v));
            }
            let mut value = self.intercept + row.dot(&Array1::from(self.beta.clone()));
            if let Some(bq) = &self.beta_quadratic {
                value += row.iter().zip(bq).map(|(s, b)| s * s * b).sum::<f64>();
            }
            est.push(value);
            se.push(a.dot(&self.covariance.dot(&a)).max(0.0).sqrt());
        }
        Ok((est, se))
    }

    /// Full outcome prediction including covariates (`Z` carries the
    /// intercept column when the training data did).
    pub fn predict(&self, x_new: ArrayView2<f64>, z_new: ArrayView2<f64>) -> Result<Vec<f64>> {
        if z_new.ncols() != self.covariate_coef.len() {
            return Err(Error::Dimension("covariate columns differ from the fit".into()));
        }
        let (h, _) = self.predict_h(x_new)?;
        let zc = z_new.dot(&Array1::from(self.covariate_coef.clone()));
        let intercept = if self.covariate_names.first().is_some_and(|n| n == crate::data::INTERCEPT) {
            self.intercept
        } else {
            0.0
        };
        Ok(h.iter().zip(zc.iter()).map(|(a, b)| a + b - intercept).collect())
    }

    /// `"0.069 (95% confidence interval: [0.030, 0.108])"`.
    pub fn report(&self) -> String {
        format!(
            "{:.3} (95% confidence interval: [{:.3}, {:.3}])",
            self.psi, self.psi_lower, self.psi_upper
        )
    }

    /// Weight table with one row per exposure.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["exposure", "beta", "se", "positive_weight", "negative_weight"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in 0..self.beta.len() {
            out.write_record([
                self.exposure_names[p].clone(),
                self.beta[p].to_string(),
                self.beta_se[p].to_string(),
                opt(self.positive[p]),
                opt(self.negative[p]),
            ])?;
        }
        out.write_record(["psi".to_string(), self.psi.to_string(), self.psi_se.to_string(), String::new(), String::new()])?;
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        let (pos, neg) = qgc_weights(&[2.0, 3.0]);
        assert_eq!(pos, vec![Some(0.4), Some(0.6)]);
        assert_eq!(neg, vec![None, None]);
        let (pos, neg) = qgc_weights(&[2.0, -1.0, 3.0]);
        assert_eq!(pos, vec![Some(0.4), None, Some(0.6)]);
        assert_eq!(neg, vec![None, Some(1.0), None]);
        assert_eq!(qgc_weights(&[5.0]).0, vec![Some(1.0)]);
    }

    #[test]
    fn named_configurations() {
        let (spec, _) = named_configuration(MethodKind::Bkmr, 3, None, KernelConfig::Gaussian).unwrap();
        assert_eq!(spec.groups(), &[vec![0], vec![1], vec![2]]);
        let (spec, _) = named_configuration(MethodKind::Bsim, 18, None, KernelConfig::Gaussian).unwrap();
        assert_eq!(spec.groups(), &[(0..18).collect::<Vec<_>>()]);
        let g = IndexSpec::parse("1-8;9-10;11-18", 18).unwrap();
        let (spec, _) = named_configuration(MethodKind::Bmim, 18, Some(&g), KernelConfig::Gaussian).unwrap();
        assert_eq!(spec.sizes(), vec![8, 2, 8]);
        assert!(named_configuration(MethodKind::Bmim, 18, None, KernelConfig::Gaussian).is_err());
        assert!(named_configuration(MethodKind::Qgc, 18, None, KernelConfig::Gaussian).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for k in MethodKind::ALL {
            assert_eq!(k.name().parse::<MethodKind>().unwrap(), k);
        }
        assert!("gp".parse::<MethodKind>().is_err());
    }

    #[test]
    fn report_format() {
        let mut fit = QgcFit {
            q: 4,
            quadratic: false,
            exposure_names: vec![],
            covariate_names: vec![],
            intercept: 0.0,
            beta: vec![],
            beta_se: vec![],
            beta_quadratic: None,
            covariate_coef: vec![],
            psi: 0.069,
            psi_se: 0.0,
            psi_lower: 0.030,
            psi_upper: 0.108,
            positive: vec![],
            negative: vec![],
            residual_var: 0.0,
            cuts: vec![],
            covariance: Array2::zeros((0, 0)),
        };
        assert_eq!(fit.report(), "0.069 (95% confidence interval: [0.030, 0.108])");
        fit.psi_lower = -0.004;
        assert!(fit.report().contains("[-0.004"));
    }
}
