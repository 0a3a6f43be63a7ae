//! Metropolis-within-Gibbs sampler over `(θ*, δ, λ⁻¹)` with `γ` and `σ²`
//! integrated out, followed by exact post-hoc draws of `(σ², γ)`.
//!
//! Each iteration proposes every weight component once in random order and
//! then takes one random-walk step on `log λ⁻¹`. An included component
//! either takes a random-walk step or proposes its own removal (probability
//! one half each); an excluded component proposes inclusion with a value
//! drawn from the slab prior. The inclusion probability `π` is integrated
//! out, leaving a beta-binomial prior on the number of included components.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Bernoulli, Distribution, Gamma, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::data::{Dataset, IndexSpec};
use crate::error::{Error, Result};
use crate::kernels::{project, KernelConfig, PairSums, WeightSet};
use crate::likelihood::{draw_from_cache, integrated_from_cache, Hyperparameters, MarginalCache};

const DEATH_PROB: f64 = 0.5;
const TARGET_ACCEPT: f64 = 0.44;
const SD_BOUNDS: (f64, f64) = (1e-4, 20.0);

/// One state of the chain. `included[m][l] == false` exactly when
/// `θ*_ml == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub weights: WeightSet,
    pub included: Vec<Vec<bool>>,
    pub lambda_inv: f64,
}

impl ParamState {
    pub fn new(weights: WeightSet, included: Vec<Vec<bool>>, lambda_inv: f64) -> Result<Self> {
        let s = Self { weights, included, lambda_inv };
        s.check()?;
        Ok(s)
    }

    /// Every component included with equal weight `0.7/√P`, `λ⁻¹ = 1`.
    pub fn initial(spec: &IndexSpec) -> Self {
        let c = 0.7 / (spec.num_exposures() as f64).sqrt();
        let per_index: Vec<Vec<f64>> = spec.sizes().iter().map(|&s| vec![c; s]).collect();
        let included = spec.sizes().iter().map(|&s| vec![true; s]).collect();
        Self {
            weights: WeightSet::new(per_index, spec).expect("sizes come from the index grouping"),
            included,
            lambda_inv: 1.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.lambda_inv > 0.0) || !self.lambda_inv.is_finite() {
            return Err(Error::InvalidArgument(format!("λ⁻¹ = {} must be positive", self.lambda_inv)));
        }
        if self.included.len() != self.weights.num_indices() {
            return Err(Error::Dimension("inclusion indicators do not match weights".into()));
        }
        for (m, flags) in self.included.iter().enumerate() {
            let w = self.weights.index(m);
            if flags.len() != w.len() {
                return Err(Error::Dimension("inclusion indicators do not match weights".into()));
            }
            if flags.iter().zip(w).any(|(&d, &t)| d != (t != 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "index {}: inclusion indicators must flag exactly the nonzero weights",
                    m + 1
                )));
            }
        }
        Ok(())
    }

    pub fn num_included(&self) -> usize {
        self.included.iter().flatten().filter(|&&d| d).count()
    }

    pub fn num_components(&self) -> usize {
        self.included.iter().map(Vec::len).sum()
    }

    /// Flips each index so its weights sum to a nonnegative value.
    pub fn canonicalize(&mut self) {
        for m in 0..self.weights.num_indices() {
            let flipped = canonicalize_sign(self.weights.index(m));
            self.weights.index_mut(m).copy_from_slice(&flipped);
        }
    }
}

/// Returns `θ*` when its components sum to at least zero, `-θ*` otherwise.
pub fn canonicalize_sign(theta: &[f64]) -> Vec<f64> {
    if theta.iter().sum::<f64>() < 0.0 {
        theta.iter().map(|v| -v).collect()
    } else {
        theta.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Initial random-walk sd for included weight components.
    pub slab_proposal_sd: f64,
    /// Initial random-walk sd on `log λ⁻¹`.
    pub lambda_proposal_sd: f64,
    /// Iterations per acceptance-rate window; proposal sds adapt at the end
    /// of each window during burn-in only.
    pub adapt_window: usize,
    pub seed: u64,
    pub chains: usize,
    /// Drop the likelihood and sample the prior.
    pub prior_only: bool,
    /// Keep every inclusion indicator at its initial value.
    pub fix_inclusion: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            iterations: 24_000,
            burn_in: 4_000,
            thin: 10,
            slab_proposal_sd: 0.1,
            lambda_proposal_sd: 0.5,
            adapt_window: 50,
            seed: 1,
            chains: 2,
            prior_only: false,
            fix_inclusion: false,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if self.burn_in >= self.iterations {
            return bad("burn-in must be smaller than the number of iterations");
        }
        if self.thin == 0 {
            return bad("thinning must be at least 1");
        }
        if !(self.slab_proposal_sd >= 0.0) || !(self.lambda_proposal_sd >= 0.0) {
            return bad("proposal sds must be nonnegative");
        }
        if self.adapt_window == 0 {
            return bad("adaptation window must be positive");
        }
        if self.chains == 0 {
            return bad("at least one chain is required");
        }
        Ok(())
    }

    /// Number of stored draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Target density pieces for one dataset and model configuration.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub data: &'a Dataset,
    pub spec: &'a IndexSpec,
    pub kernel: KernelConfig,
    pub hyper: Hyperparameters,
    pub prior_only: bool,
}

impl<'a> Model<'a> {
    pub fn new(
        data: &'a Dataset,
        spec: &'a IndexSpec,
        kernel: KernelConfig,
        hyper: Hyperparameters,
    ) -> Result<Self> {
        hyper.validate()?;
        crate::data::validate_index_spec(spec, data.p())?;
        Ok(Self { data, spec, kernel, hyper, prior_only: false })
    }

    pub fn prior_only(mut self, on: bool) -> Self {
        self.prior_only = on;
        self
    }

    /// Integrated log likelihood of `(θ*, λ⁻¹)` (zero when sampling the prior).
    pub fn log_likelihood(&self, state: &ParamState) -> Result<f64> {
        if self.prior_only {
            return Ok(0.0);
        }
        let e = project(self.data.x().view(), self.spec, &state.weights)?;
        let sums = PairSums::new(e.view(), self.kernel);
        self.loglik_from_sums(&sums, state.lambda_inv)
    }

    /// Log prior density of `(θ*, δ, λ⁻¹)` with `π` integrated out.
    pub fn log_prior(&self, state: &ParamState) -> f64 {
        let h = &self.hyper;
        let slab = state
            .weights
            .flat()
            .iter()
            .filter(|&&t| t != 0.0)
            .map(|&t| log_normal_density(t, h.slab_var))
            .sum::<f64>();
        slab + log_inclusion_prior(state.num_included(), state.num_components(), h)
            + log_gamma_density(state.lambda_inv, h.a_lambda, h.b_lambda)
    }

    pub fn log_target(&self, state: &ParamState) -> Result<f64> {
        Ok(self.log_likelihood(state)? + self.log_prior(state))
    }

    fn loglik_from_sums(&self, sums: &PairSums, lambda_inv: f64) -> Result<f64> {
        let cache = MarginalCache::from_lower_with(
            self.data.y().view(),
            self.data.z().view(),
            sums.shifted_gram(lambda_inv),
            || sums.shifted_gram(lambda_inv),
        )?;
        integrated_from_cache(&cache, &self.hyper)
    }

    /// Exact draw of `(σ², γ)` given the state.
    pub fn draw_sigma_gamma<R: Rng + ?Sized>(
        &self,
        state: &ParamState,
        rng: &mut R,
    ) -> Result<(f64, Array1<f64>)> {
        let e = project(self.data.x().view(), self.spec, &state.weights)?;
        let sums = PairSums::new(e.view(), self.kernel);
        let cache = MarginalCache::from_lower(
            self.data.y().view(),
            self.data.z().view(),
            sums.shifted_gram(state.lambda_inv),
        )?;
        draw_from_cache(&cache, &self.hyper, rng)
    }
}

fn log_normal_density(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * x * x / var
}

fn log_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log probability of one particular inclusion pattern with `k` of `total`
/// components included, after integrating `π ~ Beta(a, b)`.
pub fn log_inclusion_prior(k: usize, total: usize, h: &Hyperparameters) -> f64 {
    ln_beta(h.a_pi + k as f64, h.b_pi + (total - k) as f64) - ln_beta(h.a_pi, h.b_pi)
}

/// Draws `(θ*, δ, λ⁻¹)` from the prior, sign-canonicalized.
pub fn sample_prior<R: Rng + ?Sized>(spec: &IndexSpec, h: &Hyperparameters, rng: &mut R) -> ParamState {
    let pi = Beta::new(h.a_pi, h.b_pi).expect("validated hyperparameters").sample(rng);
    let coin = Bernoulli::new(pi).expect("probability in [0, 1]");
    let slab = Normal::new(0.0, h.slab_var.sqrt()).expect("positive slab variance");
    let mut per_index = Vec::new();
    let mut included = Vec::new();
    for &s in &spec.sizes() {
        let flags: Vec<bool> = (0..s).map(|_| coin.sample(rng)).collect();
        let w = flags.iter().map(|&d| if d { slab.sample(rng) } else { 0.0 }).collect();
        per_index.push(w);
        included.push(flags);
    }
    let lambda_inv = Gamma::new(h.a_lambda, 1.0 / h.b_lambda).expect("validated").sample(rng);
    let mut state = ParamState {
        weights: WeightSet::new(per_index, spec).expect("sizes come from the index grouping"),
        included,
        lambda_inv,
    };
    state.canonicalize();
    state
}

/// Random-walk proposal scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposals {
    /// One sd per index for weight random walks.
    pub slab_sd: Vec<f64>,
    pub lambda_sd: f64,
}

/// Proposal/acceptance counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveCounts {
    pub walk: Vec<(u64, u64)>,
    pub birth: (u64, u64),
    pub death: (u64, u64),
    pub lambda: (u64, u64),
    pub failures: u64,
}

impl MoveCounts {
    fn new(m: usize) -> Self {
        Self { walk: vec![(0, 0); m], ..Default::default() }
    }
}

fn rate((proposed, accepted): (u64, u64)) -> Option<f64> {
    (proposed > 0).then(|| accepted as f64 / proposed as f64)
}

/// Acceptance rates of one window of iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRates {
    pub end_iteration: usize,
    pub walk: Option<f64>,
    pub birth: Option<f64>,
    pub death: Option<f64>,
    pub lambda: Option<f64>,
}

impl WindowRates {
    fn from_counts(end_iteration: usize, c: &MoveCounts) -> Self {
        let walk = c.walk.iter().fold((0, 0), |acc, w| (acc.0 + w.0, acc.1 + w.1));
        Self {
            end_iteration,
            walk: rate(walk),
            birth: rate(c.birth),
            death: rate(c.death),
            lambda: rate(c.lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceLog {
    pub chain: usize,
    pub windows: Vec<WindowRates>,
    pub overall: WindowRates,
    pub final_proposals: Proposals,
    pub failed_iterations: usize,
}

/// Chain position plus the cached quantities needed to score proposals.
pub struct Sampler<'a> {
    model: Model<'a>,
    state: ParamState,
    index_values: Array2<f64>,
    sums: Option<PairSums>,
    loglik: f64,
    pub proposals: Proposals,
    pub fix_inclusion: bool,
    counts: MoveCounts,
}

impl<'a> Sampler<'a> {
    pub fn new(model: Model<'a>, state: ParamState, proposals: Proposals) -> Result<Self> {
        state.check()?;
        if proposals.slab_sd.len() != model.spec.num_indices() {
            return Err(Error::Dimension("one slab proposal sd per index".into()));
        }
        let index_values = project(model.data.x().view(), model.spec, &state.weights)?;
        let (sums, loglik) = if model.prior_only {
            (None, 0.0)
        } else {
            let sums = PairSums::new(index_values.view(), model.kernel);
            let ll = model.loglik_from_sums(&sums, state.lambda_inv)?;
            (Some(sums), ll)
        };
        let m = model.spec.num_indices();
        Ok(Self {
            model,
            state,
            index_values,
            sums,
            loglik,
            proposals,
            fix_inclusion: false,
            counts: MoveCounts::new(m),
        })
    }

    pub fn state(&self) -> &ParamState {
        &self.state
    }

    pub fn into_state(self) -> ParamState {
        self.state
    }

    pub fn log_likelihood(&self) -> f64 {
        self.loglik
    }

    pub fn counts(&self) -> &MoveCounts {
        &self.counts
    }

    fn take_counts(&mut self) -> MoveCounts {
        std::mem::replace(&mut self.counts, MoveCounts::new(self.model.spec.num_indices()))
    }

    /// One sweep of weight/inclusion moves over every component in random
    /// order. Returns the number of proposals whose likelihood could not be
    /// evaluated (they are rejected).
    pub fn update_theta_delta<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        let mut order: Vec<(usize, usize)> = self
            .model
            .spec
            .sizes()
            .iter()
            .enumerate()
            .flat_map(|(m, &s)| (0..s).map(move |l| (m, l)))
            .collect();
        order.shuffle(rng);
        let mut failures = 0;
        for (m, l) in order {
            if !self.component_move(m, l, rng)? {
                failures += 1;
            }
        }
        Ok(failures)
    }

    /// Returns `Ok(false)` when the proposal's likelihood failed.
    fn component_move<R: Rng + ?Sized>(&mut self, m: usize, l: usize, rng: &mut R) -> Result<bool> {
        let h = self.model.hyper;
        let current = self.state.weights.index(m)[l];
        let included = self.state.included[m][l];
        let k = self.state.num_included();
        let total = self.state.num_components();

        enum Kind {
            Walk,
            Birth,
            Death,
        }
        let kind = if self.fix_inclusion {
            if !included {
                return Ok(true);
            }
            Kind::Walk
        } else if included {
            if rng.random::<f64>() < DEATH_PROB {
                Kind::Death
            } else {
                Kind::Walk
            }
        } else {
            Kind::Birth
        };

        let (proposed, log_ratio_prior) = match kind {
            Kind::Walk => {
                let sd = self.proposals.slab_sd[m];
                let step = sd * rng.sample::<f64, _>(StandardNormal);
                let new = current + step;
                let lr = log_normal_density(new, h.slab_var) - log_normal_density(current, h.slab_var);
                (new, lr)
            }
            Kind::Birth => {
                // The slab density of the new value cancels against its proposal.
                let new = h.slab_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let lr = log_inclusion_prior(k + 1, total, &h) - log_inclusion_prior(k, total, &h)
                    + DEATH_PROB.ln();
                (new, lr)
            }
            Kind::Death => {
                let lr = log_inclusion_prior(k - 1, total, &h) - log_inclusion_prior(k, total, &h)
                    - DEATH_PROB.ln();
                (0.0, lr)
            }
        };
        let counter = match kind {
            Kind::Walk => &mut self.counts.walk[m],
            Kind::Birth => &mut self.counts.birth,
            Kind::Death => &mut self.counts.death,
        };
        counter.0 += 1;

        if proposed == current {
            if matches!(kind, Kind::Walk) {
                self.counts.walk[m].1 += 1;
            }
            return Ok(true);
        }
        // A walk that lands exactly on zero would break the δ/θ* coupling.
        if matches!(kind, Kind::Walk | Kind::Birth) && proposed == 0.0 {
            return Ok(true);
        }

        let col = self.model.spec.groups()[m][l];
        let delta = proposed - current;
        let x = self.model.data.x();
        let new_column: Array1<f64> = self
            .index_values
            .column(m)
            .iter()
            .zip(x.column(col))
            .map(|(&e, &xv)| e + delta * xv)
            .collect();

        let (new_sums, new_loglik) = match &self.sums {
            None => (None, 0.0),
            Some(sums) => {
                let candidate = sums.replaced(self.index_values.column(m), new_column.view());
                match self.model.loglik_from_sums(&candidate, self.state.lambda_inv) {
                    Ok(ll) if ll.is_finite() => (Some(candidate), ll),
                    Ok(_) | Err(Error::NotPositiveDefinite { .. }) => {
                        self.counts.failures += 1;
                        return Ok(false);
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let log_alpha = new_loglik - self.loglik + log_ratio_prior;
        if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
            self.state.weights.index_mut(m)[l] = proposed;
            self.state.included[m][l] = proposed != 0.0;
            self.index_values.column_mut(m).assign(&new_column);
            if new_sums.is_some() {
                self.sums = new_sums;
            }
            self.loglik = new_loglik;
            match kind {
                Kind::Walk => self.counts.walk[m].1 += 1,
                Kind::Birth => self.counts.birth.1 += 1,
                Kind::Death => self.counts.death.1 += 1,
            }
        }
        Ok(true)
    }

    /// Random-walk Metropolis step on `log λ⁻¹`. Returns `Ok(false)` when the
    /// proposal's likelihood failed.
    pub fn update_lambda<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<bool> {
        let h = self.model.hyper;
        self.counts.lambda.0 += 1;
        let step = self.proposals.lambda_sd * rng.sample::<f64, _>(StandardNormal);
        if step == 0.0 {
            self.counts.lambda.1 += 1;
            return Ok(true);
        }
        let old = self.state.lambda_inv;
        let new = (old.ln() + step).exp();
        if !(new > 0.0) || !new.is_finite() {
            return Ok(true);
        }
        let new_loglik = match &self.sums {
            None => 0.0,
            Some(sums) => match self.model.loglik_from_sums(sums, new) {
                Ok(ll) if ll.is_finite() => ll,
                Ok(_) | Err(Error::NotPositiveDefinite { .. }) => {
                    self.counts.failures += 1;
                    return Ok(false);
                }
                Err(e) => return Err(e),
            },
        };
        // Gamma prior on λ⁻¹ plus the log-scale Jacobian.
        let log_alpha = new_loglik - self.loglik + h.a_lambda * (new.ln() - old.ln()) - h.b_lambda * (new - old);
        if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
            self.state.lambda_inv = new;
            self.loglik = new_loglik;
            self.counts.lambda.1 += 1;
        }
        Ok(true)
    }

    /// Sign-canonicalizes the current state. The target is invariant under
    /// the flip, so the cached likelihood stays valid.
    pub fn canonicalize(&mut self) {
        let before = self.state.weights.clone();
        self.state.canonicalize();
        for m in 0..before.num_indices() {
            if before.index(m) != self.state.weights.index(m) {
                self.index_values.column_mut(m).mapv_inplace(|v| -v);
            }
        }
    }

    /// One full iteration: the `λ⁻¹` move, a weight/inclusion sweep and sign
    /// canonicalization. Returns true when some likelihood evaluation failed.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<bool> {
        let mut failed = !self.update_lambda(rng)?;
        failed |= self.update_theta_delta(rng)? > 0;
        self.canonicalize();
        self.refresh();
        Ok(failed)
    }

    /// Rebuilds the pair sums from scratch to shed accumulated rounding.
    fn refresh(&mut self) {
        if let Some(s) = &mut self.sums {
            *s = PairSums::new(self.index_values.view(), self.model.kernel);
        }
    }

    fn adapt(&mut self, window: &MoveCounts, step: f64) {
        let adjust = |sd: f64, r: Option<f64>| match r {
            Some(r) => (sd.ln() + step * (r - TARGET_ACCEPT)).exp().clamp(SD_BOUNDS.0, SD_BOUNDS.1),
            None => sd,
        };
        for (m, &counts) in window.walk.iter().enumerate() {
            let sd = self.proposals.slab_sd[m];
            if sd > 0.0 {
                self.proposals.slab_sd[m] = adjust(sd, rate(counts));
            }
        }
        if self.proposals.lambda_sd > 0.0 {
            self.proposals.lambda_sd = adjust(self.proposals.lambda_sd, rate(window.lambda));
        }
    }
}

/// One stored posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    /// 1-based iteration at which the state was stored.
    pub iteration: usize,
    pub state: ParamState,
    pub sigma2: f64,
    pub gamma: Vec<f64>,
}

/// Thinned post-burn-in draws from every chain, ordered by chain then
/// iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub spec: IndexSpec,
    pub kernel: KernelConfig,
    pub hyper: Hyperparameters,
    pub settings: SamplerSettings,
    pub draws: Vec<Draw>,
    pub acceptance: Vec<AcceptanceLog>,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Runs `settings.chains` independent chains from the default initial state.
pub fn run_chain(
    data: &Dataset,
    spec: &IndexSpec,
    kernel: KernelConfig,
    hyper: &Hyperparameters,
    settings: &SamplerSettings,
) -> Result<PosteriorChain> {
    run_chain_from(data, spec, kernel, hyper, settings, &ParamState::initial(spec))
}

pub fn run_chain_from(
    data: &Dataset,
    spec: &IndexSpec,
    kernel: KernelConfig,
    hyper: &Hyperparameters,
    settings: &SamplerSettings,
    init: &ParamState,
) -> Result<PosteriorChain> {
    settings.validate()?;
    let model = Model::new(data, spec, kernel, *hyper)?.prior_only(settings.prior_only);
    let results: Vec<Result<(Vec<Draw>, AcceptanceLog)>> = (0..settings.chains)
        .into_par_iter()
        .map(|c| run_single(model, settings, init.clone(), c))
        .collect();
    let mut draws = Vec::new();
    let mut acceptance = Vec::new();
    for r in results {
        let (d, a) = r?;
        draws.extend(d);
        acceptance.push(a);
    }
    Ok(PosteriorChain {
        spec: spec.clone(),
        kernel,
        hyper: *hyper,
        settings: settings.clone(),
        draws,
        acceptance,
    })
}

/// Per-chain RNG: the master seed with the chain id as stream.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn run_single(
    model: Model<'_>,
    settings: &SamplerSettings,
    init: ParamState,
    chain: usize,
) -> Result<(Vec<Draw>, AcceptanceLog)> {
    let mut rng = chain_rng(settings.seed, chain);
    let proposals = Proposals {
        slab_sd: vec![settings.slab_proposal_sd; model.spec.num_indices()],
        lambda_sd: settings.lambda_proposal_sd,
    };
    let mut sampler = Sampler::new(model, init, proposals)?;
    sampler.fix_inclusion = settings.fix_inclusion;
    sampler.canonicalize();

    let mut stored = Vec::with_capacity(settings.draws_per_chain());
    let mut windows = Vec::new();
    let mut total = MoveCounts::new(model.spec.num_indices());
    let mut failed_iterations = 0usize;
    let mut adapt_round = 0usize;

    for it in 1..=settings.iterations {
        if sampler.step(&mut rng)? {
            failed_iterations += 1;
            if failed_iterations as f64 > 0.01 * settings.iterations as f64 {
                return Err(Error::Sampler(format!(
                    "chain {chain}: likelihood evaluation failed in {failed_iterations} of the first {it} iterations"
                )));
            }
        }
        if it % settings.adapt_window == 0 {
            let window = sampler.take_counts();
            accumulate(&mut total, &window);
            windows.push(WindowRates::from_counts(it, &window));
            if it <= settings.burn_in {
                adapt_round += 1;
                sampler.adapt(&window, 1.0 / (adapt_round as f64).sqrt());
            }
        }
        if it > settings.burn_in && (it - settings.burn_in) % settings.thin == 0 {
            stored.push((it, sampler.state().clone()));
        }
    }
    let rest = sampler.take_counts();
    accumulate(&mut total, &rest);
    let final_proposals = sampler.proposals.clone();

    let mut draws = Vec::with_capacity(stored.len());
    for (iteration, state) in stored {
        let (sigma2, gamma) = model.draw_sigma_gamma(&state, &mut rng)?;
        draws.push(Draw { chain, iteration, state, sigma2, gamma: gamma.to_vec() });
    }
    let log = AcceptanceLog {
        chain,
        overall: WindowRates::from_counts(settings.iterations, &total),
        windows,
        final_proposals,
        failed_iterations,
    };
    Ok((draws, log))
}

fn accumulate(total: &mut MoveCounts, w: &MoveCounts) {
    for (t, x) in total.walk.iter_mut().zip(&w.walk) {
        t.0 += x.0;
        t.1 += x.1;
    }
    for (t, x) in [
        (&mut total.birth, w.birth),
        (&mut total.death, w.death),
        (&mut total.lambda, w.lambda),
    ] {
        t.0 += x.0;
        t.1 += x.1;
    }
    total.failures += w.failures;
}
