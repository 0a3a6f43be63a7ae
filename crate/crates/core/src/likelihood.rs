//! Gaussian marginal likelihood of `y ~ N(Zγ, σ²(I + λ⁻¹K))` and the
//! posterior with `γ` (flat prior) and `σ⁻²` (Gamma prior) integrated out.
//!
//! For `V = I + λ⁻¹K`, `A = ZᵀV⁻¹Z`, `γ̂ = A⁻¹ZᵀV⁻¹y` and
//! `S = (y - Zγ̂)ᵀV⁻¹(y - Zγ̂)`, the integrated density is
//!
//! ```text
//! (2π)^{-(N-q)/2} |V|^{-1/2} |A|^{-1/2} b^a Γ(a + (N-q)/2) / Γ(a) · (b + S/2)^{-(a + (N-q)/2)}
//! ```
//!
//! with `a = a_σ`, `b = b_σ`. Given the same quantities, `σ⁻² | y` is
//! `Gamma(a + (N-q)/2, b + S/2)` and `γ | σ², y` is `N(γ̂, σ²A⁻¹)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{CholeskyInto, UPLO};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, cholesky_jittered_with, Factor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior hyperparameters. Defaults follow the published analysis except the
/// slab variance, which is a local choice for standardized exposures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Shape of the Gamma prior on `σ⁻²`.
    pub a_sigma: f64,
    /// Rate of the Gamma prior on `σ⁻²`.
    pub b_sigma: f64,
    /// Shape of the Gamma prior on `λ⁻¹`.
    pub a_lambda: f64,
    /// Rate of the Gamma prior on `λ⁻¹`.
    pub b_lambda: f64,
    /// Beta prior on the inclusion probability `π`.
    pub a_pi: f64,
    pub b_pi: f64,
    /// Slab variance `σ²_θ` of included weights.
    pub slab_var: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            a_sigma: 0.001,
            b_sigma: 0.001,
            a_lambda: 1.0,
            b_lambda: 0.1,
            a_pi: 1.0,
            b_pi: 1.0,
            slab_var: 0.25,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.a_sigma,
            self.b_sigma,
            self.a_lambda,
            self.b_lambda,
            self.a_pi,
            self.b_pi,
            self.slab_var,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("hyperparameters must be positive: {self:?}")))
        }
    }
}

/// Factorization of `V = I + λ⁻¹K` with the whitened outcome and covariates.
#[derive(Debug, Clone)]
pub struct MarginalCache {
    factor: Factor,
    /// `L⁻¹y`
    y_white: Array1<f64>,
    /// `L⁻¹Z`
    z_white: Array2<f64>,
}

/// Generalized least squares fit of `y` on `Z` under covariance `V`.
#[derive(Debug, Clone)]
pub(crate) struct GlsFit {
    /// Lower Cholesky factor of `ZᵀV⁻¹Z`.
    pub a_chol: Array2<f64>,
    pub log_det_a: f64,
    pub gamma_hat: Array1<f64>,
    /// Residual quadratic form `(y - Zγ̂)ᵀV⁻¹(y - Zγ̂)`.
    pub s: f64,
}

impl MarginalCache {
    pub fn new(
        y: ArrayView1<f64>,
        z: ArrayView2<f64>,
        k: ArrayView2<f64>,
        lambda_inv: f64,
    ) -> Result<Self> {
        let n = y.len();
        if k.dim() != (n, n) || z.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has length {n}, K is {:?}, Z is {:?}",
                k.dim(),
                z.dim()
            )));
        }
        if !(lambda_inv >= 0.0) || !lambda_inv.is_finite() {
            return Err(Error::InvalidArgument(format!("λ⁻¹ = {lambda_inv} must be ≥ 0")));
        }
        let mut v = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                v[[i, j]] = lambda_inv * k[[i, j]];
            }
            v[[i, i]] += 1.0;
        }
        Self::from_lower(y, z, v)
    }

    /// Builds the cache from `V` with (at least) its lower triangle filled.
    pub(crate) fn from_lower(y: ArrayView1<f64>, z: ArrayView2<f64>, v: Array2<f64>) -> Result<Self> {
        Self::from_factor(y, z, cholesky_jittered(v)?)
    }

    /// As [`Self::from_lower`], rebuilding `V` with `rebuild` if jitter is needed.
    pub(crate) fn from_lower_with(
        y: ArrayView1<f64>,
        z: ArrayView2<f64>,
        v: Array2<f64>,
        rebuild: impl Fn() -> Array2<f64>,
    ) -> Result<Self> {
        Self::from_factor(y, z, cholesky_jittered_with(v, rebuild)?)
    }

    fn from_factor(y: ArrayView1<f64>, z: ArrayView2<f64>, factor: Factor) -> Result<Self> {
        let y_white = factor.forward_vec(&y.to_owned());
        let z_white = factor.forward(&z.to_owned());
        Ok(Self { factor, y_white, z_white })
    }

    pub fn n(&self) -> usize {
        self.y_white.len()
    }

    pub fn q(&self) -> usize {
        self.z_white.ncols()
    }

    pub fn log_det_v(&self) -> f64 {
        self.factor.log_det()
    }

    /// Diagonal jitter that was needed to factor `V` (0 when none).
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// `yᵀV⁻¹y`.
    pub fn y_quad(&self) -> f64 {
        self.y_white.dot(&self.y_white)
    }

    /// `ZᵀV⁻¹Z`.
    pub fn z_quad(&self) -> Array2<f64> {
        self.z_white.t().dot(&self.z_white)
    }

    /// `ZᵀV⁻¹y`.
    pub fn z_cross(&self) -> Array1<f64> {
        self.z_white.t().dot(&self.y_white)
    }

    pub(crate) fn gls(&self) -> Result<GlsFit> {
        let q = self.q();
        if q == 0 {
            return Ok(GlsFit {
                a_chol: Array2::zeros((0, 0)),
                log_det_a: 0.0,
                gamma_hat: Array1::zeros(0),
                s: self.y_quad(),
            });
        }
        let a = self.z_quad();
        check_full_rank(&a)?;
        let a_chol = a.cholesky_into(UPLO::Lower).map_err(|_| Error::RankDeficient)?;
        let a_factor = Factor { l: a_chol, jitter: 0.0 };
        let gamma_hat = a_factor.solve_vec(&self.z_cross());
        let resid = &self.y_white - &self.z_white.dot(&gamma_hat);
        let s = resid.dot(&resid);
        Ok(GlsFit { log_det_a: a_factor.log_det(), a_chol: a_factor.l, gamma_hat, s })
    }
}

/// Rejects `A` whose correlation form has a pivot below `1e-12`.
fn check_full_rank(a: &Array2<f64>) -> Result<()> {
    let d: Vec<f64> = a.diag().iter().map(|v| v.sqrt()).collect();
    if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::RankDeficient);
    }
    let mut c = a.clone();
    for ((i, j), v) in c.indexed_iter_mut() {
        *v /= d[i] * d[j];
    }
    let l = c.cholesky_into(UPLO::Lower).map_err(|_| Error::RankDeficient)?;
    if l.diag().iter().any(|p| !(p * p > 1e-12)) {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

/// Log density of `N(Zγ, σ²(I + λ⁻¹K))` at `y`.
pub fn marginal_log_likelihood(
    y: ArrayView1<f64>,
    z: ArrayView2<f64>,
    k: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    sigma2: f64,
    lambda_inv: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("σ² = {sigma2} must be positive")));
    }
    if gamma.len() != z.ncols() {
        return Err(Error::Dimension("γ length differs from Z columns".into()));
    }
    let resid = &y - &z.dot(&gamma);
    let cache = MarginalCache::new(resid.view(), z.slice(ndarray::s![.., 0..0]), k, lambda_inv)?;
    let n = y.len() as f64;
    Ok(-0.5 * n * (LN_2PI + sigma2.ln()) - 0.5 * cache.log_det_v() - 0.5 * cache.y_quad() / sigma2)
}

/// Log of `∫∫ N(y; Zγ, σ²V) Gamma(σ⁻²; a_σ, b_σ) dγ dσ⁻²` with a flat prior on
/// `γ`, including all normalizing constants.
pub fn integrated_log_posterior(
    y: ArrayView1<f64>,
    z: ArrayView2<f64>,
    k: ArrayView2<f64>,
    lambda_inv: f64,
    hyper: &Hyperparameters,
) -> Result<f64> {
    check_design(y.len(), z.ncols())?;
    let cache = MarginalCache::new(y, z, k, lambda_inv)?;
    integrated_from_cache(&cache, hyper)
}

fn check_design(n: usize, q: usize) -> Result<()> {
    if n <= q {
        return Err(Error::InvalidArgument(format!("need N ({n}) > q ({q})")));
    }
    Ok(())
}

pub(crate) fn integrated_from_cache(cache: &MarginalCache, hyper: &Hyperparameters) -> Result<f64> {
    let fit = cache.gls()?;
    Ok(integrated_from_parts(cache.n(), cache.q(), cache.log_det_v(), fit.log_det_a, fit.s, hyper))
}

fn integrated_from_parts(
    n: usize,
    q: usize,
    log_det_v: f64,
    log_det_a: f64,
    s: f64,
    hyper: &Hyperparameters,
) -> f64 {
    let dof = (n - q) as f64 / 2.0;
    let shape = hyper.a_sigma + dof;
    -dof * LN_2PI - 0.5 * log_det_v - 0.5 * log_det_a + hyper.a_sigma * hyper.b_sigma.ln()
        - ln_gamma(hyper.a_sigma)
        + ln_gamma(shape)
        - shape * (hyper.b_sigma + 0.5 * s).ln()
}

/// Draws `(σ², γ)` from their joint conditional posterior given `(K, λ⁻¹)`.
pub fn draw_sigma_gamma<R: Rng + ?Sized>(
    y: ArrayView1<f64>,
    z: ArrayView2<f64>,
    k: ArrayView2<f64>,
    lambda_inv: f64,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<(f64, Array1<f64>)> {
    check_design(y.len(), z.ncols())?;
    let cache = MarginalCache::new(y, z, k, lambda_inv)?;
    draw_from_cache(&cache, hyper, rng)
}

pub(crate) fn draw_from_cache<R: Rng + ?Sized>(
    cache: &MarginalCache,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<(f64, Array1<f64>)> {
    let fit = cache.gls()?;
    let shape = hyper.a_sigma + (cache.n() - cache.q()) as f64 / 2.0;
    let rate = hyper.b_sigma + 0.5 * fit.s;
    let precision = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Sampler(format!("σ⁻² posterior: {e}")))?
        .sample(rng);
    let sigma2 = 1.0 / precision;
    let q = cache.q();
    let mut gamma = fit.gamma_hat.clone();
    if q > 0 {
        let xi: Array1<f64> = (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let a = Factor { l: fit.a_chol, jitter: 0.0 };
        gamma = gamma + a.backward_vec(&xi) * sigma2.sqrt();
    }
    Ok((sigma2, gamma))
}

/// `Σ_i log N(y_i; z_iᵀγ, σ²)`; the `λ⁻¹ = 0` reference case.
#[cfg(test)]
fn independent_normal_log_density(
    y: ArrayView1<f64>,
    z: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    sigma2: f64,
) -> f64 {
    let mean = z.dot(&gamma);
    y.iter()
        .zip(mean.iter())
        .map(|(&yi, &mi)| -0.5 * (LN_2PI + sigma2.ln()) - 0.5 * (yi - mi).powi(2) / sigma2)
        .sum()
}
