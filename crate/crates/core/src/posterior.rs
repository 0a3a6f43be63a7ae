//! Summaries of a finished chain: weight decomposition and inclusion
//! probabilities, posterior predictive surfaces, index-wise curves,
//! interaction grids and overall contrasts.
//!
//! Index-space locations used here are expressed on the unit-direction
//! scale `xᵀθ_m`; each draw rescales them by its own `ρ_m^{1/2}`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{cross_from_index, gram_from_index, project, KernelConfig, WeightSet};
use crate::linalg::cholesky_jittered;
use crate::sampler::{Draw, PosteriorChain};
use crate::stats;

/// `(ρ, θ)` with `ρ = ‖θ*‖²` and `θ = θ*/‖θ*‖`; `θ` is `None` when `ρ = 0`.
pub fn decompose_weights(theta_star: &[f64]) -> (f64, Option<Vec<f64>>) {
    let rho: f64 = theta_star.iter().map(|t| t * t).sum();
    if rho == 0.0 {
        return (0.0, None);
    }
    let norm = rho.sqrt();
    let mut theta: Vec<f64> = theta_star.iter().map(|t| t / norm).collect();
    if theta.iter().sum::<f64>() < 0.0 {
        theta.iter_mut().for_each(|t| *t = -*t);
    }
    (rho, Some(theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub exposure: String,
    /// `P(θ_ml ≠ 0 | ρ_m ≠ 0)`.
    pub conditional_pip: Option<f64>,
    /// `P(θ_ml ≠ 0)`.
    pub marginal_pip: f64,
    /// Mean of `θ_ml` over draws with `ρ_m > 0`.
    pub conditional_mean: Option<f64>,
    /// Component of the conditional mean vector rescaled to unit norm.
    pub standardized: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    /// `P(ρ_m ≠ 0)`.
    pub pip: f64,
    pub rho_mean: f64,
    pub rho_lower: f64,
    pub rho_upper: f64,
    pub components: Vec<ComponentSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub indices: Vec<IndexSummary>,
}

impl WeightSummary {
    /// Unit-norm conditional mean direction per index, `None` for indices
    /// never included.
    pub fn mean_directions(&self) -> Vec<Option<Vec<f64>>> {
        self.indices
            .iter()
            .map(|ix| ix.components.iter().map(|c| c.standardized).collect())
            .collect()
    }

    /// Writes the table as CSV, one row per weight component.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "index",
            "exposure",
            "index_pip",
            "rho_mean",
            "conditional_pip",
            "marginal_pip",
            "conditional_mean",
            "estimate",
            "lower",
            "upper",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (m, ix) in self.indices.iter().enumerate() {
            for c in &ix.components {
                out.write_record([
                    (m + 1).to_string(),
                    c.exposure.clone(),
                    ix.pip.to_string(),
                    ix.rho_mean.to_string(),
                    opt(c.conditional_pip),
                    c.marginal_pip.to_string(),
                    opt(c.conditional_mean),
                    opt(c.standardized),
                    opt(c.lower),
                    opt(c.upper),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Inclusion probabilities and weight summaries. `names` labels the
/// exposures in column order; defaults to `x1, x2, …`.
pub fn compute_pips(chain: &PosteriorChain, names: Option<&[String]>) -> Result<WeightSummary> {
    if chain.draws.is_empty() {
        return Err(Error::EmptyChain);
    }
    let n_draws = chain.draws.len() as f64;
    let mut indices = Vec::new();
    for (m, group) in chain.spec.groups().iter().enumerate() {
        let mut rhos = Vec::with_capacity(chain.draws.len());
        let mut thetas: Vec<Vec<f64>> = Vec::new();
        let mut nonzero = vec![0usize; group.len()];
        for d in &chain.draws {
            let (rho, theta) = decompose_weights(d.state.weights.index(m));
            rhos.push(rho);
            if let Some(t) = theta {
                for (l, flag) in d.state.included[m].iter().enumerate() {
                    nonzero[l] += *flag as usize;
                }
                thetas.push(t);
            }
        }
        let included = thetas.len();
        let pip = included as f64 / n_draws;
        let means: Option<Vec<f64>> = (included > 0).then(|| {
            (0..group.len()).map(|l| thetas.iter().map(|t| t[l]).sum::<f64>() / included as f64).collect()
        });
        let standardized = means.as_ref().map(|mu| {
            let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                mu.iter().map(|v| v / norm).collect()
            } else {
                mu.clone()
            }
        });
        let components = group
            .iter()
            .enumerate()
            .map(|(l, &col)| {
                let exposure = names
                    .and_then(|n| n.get(col).cloned())
                    .unwrap_or_else(|| format!("x{}", col + 1));
                if included == 0 {
                    return ComponentSummary {
                        exposure,
                        conditional_pip: None,
                        marginal_pip: 0.0,
                        conditional_mean: None,
                        standardized: None,
                        lower: None,
                        upper: None,
                    };
                }
                let cond = nonzero[l] as f64 / included as f64;
                let sorted = stats::sorted(&thetas.iter().map(|t| t[l]).collect::<Vec<_>>());
                ComponentSummary {
                    exposure,
                    conditional_pip: Some(cond),
                    marginal_pip: pip * cond,
                    conditional_mean: means.as_ref().map(|mu| mu[l]),
                    standardized: standardized.as_ref().map(|s| s[l]),
                    lower: Some(stats::quantile_sorted(&sorted, 0.025)),
                    upper: Some(stats::quantile_sorted(&sorted, 0.975)),
                }
            })
            .collect();
        let rho_sorted = stats::sorted(&rhos);
        indices.push(IndexSummary {
            pip,
            rho_mean: stats::mean(&rhos),
            rho_lower: stats::quantile_sorted(&rho_sorted, 0.025),
            rho_upper: stats::quantile_sorted(&rho_sorted, 0.975),
            components,
        });
    }
    Ok(WeightSummary { indices })
}

/// Predictive mean and covariance of `h` at `G` new locations for one
/// draw, given the training kernel `K` (N×N), the cross kernel `K^no`
/// (G×N), `K^nn` (G×G) and the covariate-adjusted outcome `y − Zγ`.
pub fn predictive_moments(
    k: ArrayView2<f64>,
    k_no: ArrayView2<f64>,
    k_nn: ArrayView2<f64>,
    lambda_inv: f64,
    sigma2: f64,
    resid: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let (mean, w) = predictive_core(k, k_no, lambda_inv, resid)?;
    let cov = (&k_nn - &(w.t().dot(&w) * lambda_inv)) * (sigma2 * lambda_inv);
    Ok((mean, cov))
}

/// Returns the predictive mean and `W = L⁻¹K^noᵀ`.
fn predictive_core(
    k: ArrayView2<f64>,
    k_no: ArrayView2<f64>,
    lambda_inv: f64,
    resid: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = k.nrows();
    if k.ncols() != n || k_no.ncols() != n || resid.len() != n {
        return Err(Error::Dimension("kernel blocks do not conform".into()));
    }
    let mut v = k.to_owned() * lambda_inv;
    v.diag_mut().mapv_inplace(|d| d + 1.0);
    let f = cholesky_jittered(v)?;
    let alpha = f.solve_vec(&resid.to_owned());
    let mean = k_no.dot(&alpha) * lambda_inv;
    let w = f.forward(&k_no.t().to_owned());
    Ok((mean, w))
}

/// Per-draw predictive means and variances at `G` locations.
fn predictive_diag(
    k: ArrayView2<f64>,
    k_no: ArrayView2<f64>,
    k_nn_diag: &[f64],
    lambda_inv: f64,
    sigma2: f64,
    resid: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let (mean, w) = predictive_core(k, k_no, lambda_inv, resid)?;
    let var = k_nn_diag
        .iter()
        .enumerate()
        .map(|(g, &knn)| {
            let ww: f64 = w.column(g).iter().map(|v| v * v).sum();
            (sigma2 * lambda_inv * (knn - lambda_inv * ww)).max(0.0)
        })
        .collect();
    Ok((mean, var))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictOptions {
    /// Credible level of the pooled intervals.
    pub level: f64,
    /// Add each draw's intercept `γ_0` to its predictive mean.
    pub include_intercept: bool,
    /// Let index directions vary per draw in index-space queries instead of
    /// fixing them at their conditional posterior means.
    pub propagate_weights: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self { level: 0.95, include_intercept: false, propagate_weights: false }
    }
}

/// Pooled posterior summary of `h` at a set of query locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceEstimate {
    /// Query locations: raw exposure rows or unit-direction index values.
    pub grid: Array2<f64>,
    /// Per-draw predictive means (draws × G).
    pub draw_means: Array2<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SurfaceEstimate {
    fn pool(grid: Array2<f64>, per_draw: Vec<(Array1<f64>, Array1<f64>)>, level: f64) -> Self {
        let d = per_draw.len();
        let g = grid.nrows();
        let mut draw_means = Array2::zeros((d, g));
        let mut draw_vars = Array2::zeros((d, g));
        for (i, (m, v)) in per_draw.into_iter().enumerate() {
            draw_means.row_mut(i).assign(&m);
            draw_vars.row_mut(i).assign(&v);
        }
        let tail = (1.0 - level) / 2.0;
        let mut mean = Vec::with_capacity(g);
        let mut sd = Vec::with_capacity(g);
        let mut lower = Vec::with_capacity(g);
        let mut upper = Vec::with_capacity(g);
        for j in 0..g {
            let mu = draw_means.column(j).to_vec();
            let var = draw_vars.column(j).to_vec();
            let mbar = stats::mean(&mu);
            let within = stats::mean(&var);
            let between = mu.iter().map(|m| (m - mbar).powi(2)).sum::<f64>() / d as f64;
            mean.push(mbar);
            sd.push((within + between).sqrt());
            let lo = stats::normal_mixture_quantile(&mu, &var, tail);
            let hi = stats::normal_mixture_quantile(&mu, &var, 1.0 - tail);
            lower.push(lo.min(mbar));
            upper.push(hi.max(mbar));
        }
        Self { grid, draw_means, mean, sd, lower, upper }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Conditional posterior mean direction per index (unit norm), `None` for
/// indices never included.
pub fn mean_directions(chain: &PosteriorChain) -> Result<Vec<Option<Vec<f64>>>> {
    Ok(compute_pips(chain, None)?.mean_directions())
}

/// `N×M` index values `x_imᵀθ̄_m` at the conditional mean directions
/// (zero columns for indices never included).
pub fn mean_index_values(chain: &PosteriorChain, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let dirs = mean_directions(chain)?;
    project(x, &chain.spec, &directions_as_weights(&dirs, chain)?)
}

fn directions_as_weights(dirs: &[Option<Vec<f64>>], chain: &PosteriorChain) -> Result<WeightSet> {
    let per_index = dirs
        .iter()
        .zip(chain.spec.sizes())
        .map(|(d, s)| d.clone().unwrap_or_else(|| vec![0.0; s]))
        .collect();
    WeightSet::new(per_index, &chain.spec)
}

fn residual(data: &Dataset, draw: &Draw) -> Array1<f64> {
    data.y() - &data.z().dot(&Array1::from(draw.gamma.clone()))
}

fn check_chain(chain: &PosteriorChain, data: &Dataset) -> Result<()> {
    if chain.draws.is_empty() {
        return Err(Error::EmptyChain);
    }
    if data.p() != chain.spec.num_exposures() {
        return Err(Error::Dimension("dataset exposures do not match the fitted grouping".into()));
    }
    if chain.draws[0].gamma.len() != data.q() {
        return Err(Error::Dimension("dataset covariates do not match the fitted model".into()));
    }
    Ok(())
}

fn intercept_shift(data: &Dataset, draw: &Draw, opts: &PredictOptions) -> Result<f64> {
    if !opts.include_intercept {
        return Ok(0.0);
    }
    if !data.has_intercept() {
        return Err(Error::InvalidArgument("the model has no intercept to add".into()));
    }
    Ok(draw.gamma[0])
}

/// Posterior predictive of `h` at raw exposure rows, each draw using its
/// own weights.
pub fn predict_surface(
    chain: &PosteriorChain,
    data: &Dataset,
    x_new: ArrayView2<f64>,
    opts: &PredictOptions,
) -> Result<SurfaceEstimate> {
    check_chain(chain, data)?;
    if x_new.ncols() != data.p() {
        return Err(Error::Dimension(format!(
            "query rows have {} columns, expected {}",
            x_new.ncols(),
            data.p()
        )));
    }
    let cfg = chain.kernel;
    let per_draw = chain
        .draws
        .par_iter()
        .map(|d| {
            let e = project(data.x().view(), &chain.spec, &d.state.weights)?;
            let q = project(x_new, &chain.spec, &d.state.weights)?;
            let (mean, var) = draw_at(cfg, e.view(), q.view(), d, data)?;
            Ok((mean + intercept_shift(data, d, opts)?, var))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfaceEstimate::pool(x_new.to_owned(), per_draw, opts.level))
}

fn draw_at(
    cfg: KernelConfig,
    e: ArrayView2<f64>,
    q: ArrayView2<f64>,
    d: &Draw,
    data: &Dataset,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let k = gram_from_index(e, cfg);
    let k_no = cross_from_index(q, e, cfg);
    let k_nn_diag: Vec<f64> = q
        .rows()
        .into_iter()
        .map(|r| {
            let s: f64 = r.iter().map(|&a| cfg.pair_term(a, a)).sum();
            cfg.from_pair_sum(s)
        })
        .collect();
    predictive_diag(
        k.view(),
        k_no.view(),
        &k_nn_diag,
        d.state.lambda_inv,
        d.sigma2,
        residual(data, d).view(),
    )
}

/// Posterior predictive at index-space locations (G×M, unit-direction
/// scale). Directions are fixed at their conditional means unless
/// `opts.propagate_weights` is set.
pub fn predict_index_surface(
    chain: &PosteriorChain,
    data: &Dataset,
    grid: ArrayView2<f64>,
    opts: &PredictOptions,
) -> Result<SurfaceEstimate> {
    check_chain(chain, data)?;
    let m_count = chain.spec.num_indices();
    if grid.ncols() != m_count {
        return Err(Error::Dimension(format!(
            "index grid has {} columns, model has {m_count} indices",
            grid.ncols()
        )));
    }
    let fixed = mean_index_values(chain, data.x().view())?;
    let cfg = chain.kernel;
    let per_draw = chain
        .draws
        .par_iter()
        .map(|d| {
            let scales: Vec<f64> = (0..m_count)
                .map(|m| decompose_weights(d.state.weights.index(m)).0.sqrt())
                .collect();
            let e = if opts.propagate_weights {
                project(data.x().view(), &chain.spec, &d.state.weights)?
            } else {
                scale_columns(fixed.view(), &scales)
            };
            let q = scale_columns(grid, &scales);
            let (mean, var) = draw_at(cfg, e.view(), q.view(), d, data)?;
            Ok((mean + intercept_shift(data, d, opts)?, var))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfaceEstimate::pool(grid.to_owned(), per_draw, opts.level))
}

fn scale_columns(a: ArrayView2<f64>, scales: &[f64]) -> Array2<f64> {
    let mut out = a.to_owned();
    for (mut col, &s) in out.columns_mut().into_iter().zip(scales) {
        col.mapv_inplace(|v| v * s);
    }
    out
}

/// Curve of `h` along one index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// Zero-based index the curve runs along.
    pub index: usize,
    /// Grid values along that index (unit-direction scale).
    pub values: Vec<f64>,
    /// Label of the fixing rule for the remaining indices.
    pub label: String,
    pub surface: SurfaceEstimate,
}

impl Curve {
    pub fn write_csv_rows<W: std::io::Write>(&self, out: &mut csv::Writer<W>) -> Result<()> {
        for (g, v) in self.values.iter().enumerate() {
            out.write_record([
                (self.index + 1).to_string(),
                v.to_string(),
                self.surface.mean[g].to_string(),
                self.surface.lower[g].to_string(),
                self.surface.upper[g].to_string(),
                self.label.clone(),
            ])?;
        }
        Ok(())
    }

    pub const CSV_HEADER: [&'static str; 6] = ["index", "value", "mean", "lower", "upper", "fixed"];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveOptions {
    pub grid_size: usize,
    /// Quantile at which the other indices are held.
    pub fix_quantile: f64,
    pub predict: PredictOptions,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self { grid_size: 50, fix_quantile: 0.5, predict: PredictOptions::default() }
    }
}

fn curve_base(chain: &PosteriorChain, data: &Dataset, m: usize, opts: &CurveOptions) -> Result<Array2<f64>> {
    check_chain(chain, data)?;
    if m >= chain.spec.num_indices() {
        return Err(Error::InvalidArgument(format!(
            "index {} does not exist (model has {})",
            m + 1,
            chain.spec.num_indices()
        )));
    }
    if opts.grid_size < 2 {
        return Err(Error::InvalidArgument("a curve needs at least 2 grid points".into()));
    }
    if !(0.0..=1.0).contains(&opts.fix_quantile) {
        return Err(Error::InvalidArgument("fixing quantile must lie in [0, 1]".into()));
    }
    if mean_directions(chain)?[m].is_none() {
        return Err(Error::UndefinedCurve { index: m + 1 });
    }
    mean_index_values(chain, data.x().view())
}

fn curve_grid(e: &Array2<f64>, m: usize, g: usize, fixed: &[f64]) -> (Vec<f64>, Array2<f64>) {
    let col = stats::sorted(&e.column(m).to_vec());
    let lo = stats::quantile_sorted(&col, 0.05);
    let hi = stats::quantile_sorted(&col, 0.95);
    let values: Vec<f64> = (0..g)
        .map(|i| if i + 1 == g { hi } else { lo + (hi - lo) * i as f64 / (g - 1) as f64 })
        .collect();
    let mut grid = Array2::zeros((g, e.ncols()));
    for (i, &v) in values.iter().enumerate() {
        for (k, &f) in fixed.iter().enumerate() {
            grid[[i, k]] = if k == m { v } else { f };
        }
    }
    (values, grid)
}

fn column_quantiles(e: &Array2<f64>, p: f64) -> Vec<f64> {
    e.columns().into_iter().map(|c| stats::quantile(&c.to_vec(), p)).collect()
}

/// `h` along index `m` (zero-based) over an equally spaced grid between the
/// 5th and 95th percentiles of its posterior-mean index values, other
/// indices held at `fix_quantile`.
pub fn indexwise_curve(
    chain: &PosteriorChain,
    data: &Dataset,
    m: usize,
    opts: &CurveOptions,
) -> Result<Curve> {
    let e = curve_base(chain, data, m, opts)?;
    let fixed = column_quantiles(&e, opts.fix_quantile);
    let (values, grid) = curve_grid(&e, m, opts.grid_size, &fixed);
    let surface = predict_index_surface(chain, data, grid.view(), &opts.predict)?;
    Ok(Curve { index: m, values, label: format!("q{}", opts.fix_quantile), surface })
}

/// Curves along index `m` with index `other` held at each listed
/// percentile and the remaining indices at their medians.
pub fn interaction_grid(
    chain: &PosteriorChain,
    data: &Dataset,
    m: usize,
    other: usize,
    percentiles: &[f64],
    opts: &CurveOptions,
) -> Result<Vec<Curve>> {
    if chain.spec.num_indices() < 2 {
        return Err(Error::InvalidArgument("interaction grids need at least two indices".into()));
    }
    if m == other || other >= chain.spec.num_indices() {
        return Err(Error::InvalidArgument(format!(
            "second index {} must differ from {} and exist",
            other + 1,
            m + 1
        )));
    }
    let e = curve_base(chain, data, m, opts)?;
    let medians = column_quantiles(&e, 0.5);
    let other_col = stats::sorted(&e.column(other).to_vec());
    percentiles
        .iter()
        .map(|&p| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("percentile {p} outside [0, 1]")));
            }
            let mut fixed = medians.clone();
            fixed[other] = stats::quantile_sorted(&other_col, p);
            let (values, grid) = curve_grid(&e, m, opts.grid_size, &fixed);
            let surface = predict_index_surface(chain, data, grid.view(), &opts.predict)?;
            Ok(Curve { index: m, values, label: format!("index{}=q{}", other + 1, p), surface })
        })
        .collect()
}

/// Posterior summary of `h(x_hi) − h(x_lo)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl std::fmt::Display for Contrast {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} (95% CI [{:.3}, {:.3}])", self.estimate, self.lower, self.upper)
    }
}

/// Contrast between two exposure rows: every exposure at its empirical
/// `q_hi` versus `q_lo` percentile. With `restrict = Some(m)` only the
/// exposures of index `m` move and all others sit at their medians.
pub fn overall_contrast(
    chain: &PosteriorChain,
    data: &Dataset,
    q_hi: f64,
    q_lo: f64,
    restrict: Option<usize>,
    level: f64,
) -> Result<Contrast> {
    check_chain(chain, data)?;
    for q in [q_hi, q_lo] {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidArgument(format!("percentile {q} must lie in (0, 1)")));
        }
    }
    let moving: Vec<bool> = match restrict {
        None => vec![true; data.p()],
        Some(m) => {
            let group = chain.spec.groups().get(m).ok_or_else(|| {
                Error::InvalidArgument(format!("index {} does not exist", m + 1))
            })?;
            (0..data.p()).map(|c| group.contains(&c)).collect()
        }
    };
    let x = data.x();
    let mut rows = Array2::zeros((2, data.p()));
    for c in 0..data.p() {
        let col = stats::sorted(&x.column(c).to_vec());
        let (hi, lo) = if moving[c] {
            (stats::quantile_sorted(&col, q_hi), stats::quantile_sorted(&col, q_lo))
        } else {
            let med = stats::quantile_sorted(&col, 0.5);
            (med, med)
        };
        rows[[0, c]] = hi;
        rows[[1, c]] = lo;
    }
    let cfg = chain.kernel;
    let per_draw = chain
        .draws
        .par_iter()
        .map(|d| {
            let e = project(x.view(), &chain.spec, &d.state.weights)?;
            let q = project(rows.view(), &chain.spec, &d.state.weights)?;
            let k = gram_from_index(e.view(), cfg);
            let k_no = cross_from_index(q.view(), e.view(), cfg);
            let k_nn = gram_from_index(q.view(), cfg);
            let (mean, cov) = predictive_moments(
                k.view(),
                k_no.view(),
                k_nn.view(),
                d.state.lambda_inv,
                d.sigma2,
                residual(data, d).view(),
            )?;
            let var = (cov[[0, 0]] + cov[[1, 1]] - cov[[0, 1]] - cov[[1, 0]]).max(0.0);
            Ok((mean[0] - mean[1], var))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (means, vars): (Vec<f64>, Vec<f64>) = per_draw.into_iter().unzip();
    let estimate = stats::mean(&means);
    let between = means.iter().map(|m| (m - estimate).powi(2)).sum::<f64>() / means.len() as f64;
    let tail = (1.0 - level) / 2.0;
    Ok(Contrast {
        estimate,
        sd: (stats::mean(&vars) + between).sqrt(),
        lower: stats::normal_mixture_quantile(&means, &vars, tail).min(estimate),
        upper: stats::normal_mixture_quantile(&means, &vars, 1.0 - tail).max(estimate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn decomposition_examples() {
        let (rho, theta) = decompose_weights(&[0.6, 0.8]);
        assert!((rho - 1.0).abs() < 1e-15);
        assert_eq!(theta.unwrap(), vec![0.6, 0.8]);
        let (rho, theta) = decompose_weights(&[3.0, 4.0]);
        assert_eq!(rho, 25.0);
        let t = theta.unwrap();
        assert!((t[0] - 0.6).abs() < 1e-15 && (t[1] - 0.8).abs() < 1e-15);
        assert_eq!(decompose_weights(&[0.0, 0.0]), (0.0, None));
    }

    #[test]
    fn scalar_predictive_case() {
        let one = array![[1.0]];
        let (mean, cov) =
            predictive_moments(one.view(), one.view(), one.view(), 1.0, 1.0, array![2.0].view()).unwrap();
        assert!((mean[0] - 1.0).abs() < 1e-12);
        assert!((cov[[0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn null_lambda_gives_zero_prediction() {
        let k = array![[1.0, 0.3], [0.3, 1.0]];
        let k_no = array![[0.5, 0.2]];
        let k_nn = array![[1.0]];
        let (mean, cov) =
            predictive_moments(k.view(), k_no.view(), k_nn.view(), 0.0, 2.0, array![1.0, -1.0].view()).unwrap();
        assert_eq!(mean[0], 0.0);
        assert_eq!(cov[[0, 0]], 0.0);
    }

    #[test]
    fn zero_cross_kernel() {
        let k = array![[1.0, 0.3], [0.3, 1.0]];
        let k_no = array![[0.0, 0.0]];
        let k_nn = array![[0.7]];
        let (mean, cov) =
            predictive_moments(k.view(), k_no.view(), k_nn.view(), 2.0, 1.5, array![1.0, -1.0].view()).unwrap();
        assert_eq!(mean[0], 0.0);
        assert!((cov[[0, 0]] - 1.5 * 2.0 * 0.7).abs() < 1e-14);
    }
}
