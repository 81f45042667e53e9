//! Metropolized-Gibbs samplers for spike-and-slab quasi-posteriors.
//!
//! One iteration refreshes `θ` given `δ` and then sweeps `j = 1..p`, proposing
//! to flip `δ_j`. The generic path advances the active block of `θ` with a
//! user-supplied [`InnerKernel`]; the linear-regression path draws it exactly
//! from its Gaussian conditional.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, SpdFactor};
use crate::model::{
    check_dims, BinaryModel, GaussianRegressionQL, LogDensity, ModelState, PriorSpec, QuasiLikelihood,
};
use crate::rng::{self, SimRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub thin: usize,
    pub lazy_half: bool,
    pub cap: Option<usize>,
}

impl SamplerConfig {
    /// Burn-in defaults to half the run.
    pub fn new(n_iter: usize, seed: u64) -> Self {
        SamplerConfig {
            n_iter,
            seed,
            burn_in: n_iter / 2,
            thin: 1,
            lazy_half: true,
            cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::InvalidConfig("n_iter must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.cap == Some(0) {
            return Err(Error::InvalidConfig("cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Per-coordinate flip proposals and acceptances.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCounts {
    pub proposed: Vec<u64>,
    pub accepted: Vec<u64>,
}

impl AcceptanceCounts {
    pub fn new(p: usize) -> Self {
        AcceptanceCounts {
            proposed: vec![0; p],
            accepted: vec![0; p],
        }
    }

    pub fn overall_rate(&self) -> f64 {
        let p: u64 = self.proposed.iter().sum();
        let a: u64 = self.accepted.iter().sum();
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }
}

/// Wall-clock statistics of the iteration loop, excluding setup.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub iterations: usize,
    pub total_secs: f64,
    pub min_secs: f64,
    pub max_secs: f64,
}

impl Timing {
    pub fn mean_secs(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.total_secs / self.iterations as f64
        }
    }

    fn record(&mut self, secs: f64) {
        if self.iterations == 0 {
            self.min_secs = secs;
            self.max_secs = secs;
        } else {
            self.min_secs = self.min_secs.min(secs);
            self.max_secs = self.max_secs.max(secs);
        }
        self.iterations += 1;
        self.total_secs += secs;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    /// 1-based iteration number of each retained sample.
    pub iterations: Vec<usize>,
    pub delta_samples: Vec<BinaryModel>,
    pub theta_samples: Vec<Vec<f64>>,
    pub acceptance_counts: AcceptanceCounts,
    pub timing: Timing,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.delta_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_samples.is_empty()
    }

    pub fn model_sizes(&self) -> Vec<usize> {
        self.delta_samples.iter().map(|d| d.count()).collect()
    }

    /// Fraction of retained samples with `δ_j = 1`, per coordinate.
    pub fn inclusion_frequencies(&self) -> Vec<f64> {
        let Some(first) = self.delta_samples.first() else {
            return Vec::new();
        };
        let mut freq = vec![0.0; first.len()];
        for d in &self.delta_samples {
            for j in d.active_indices() {
                freq[j] += 1.0;
            }
        }
        let n = self.len() as f64;
        freq.iter_mut().for_each(|f| *f /= n);
        freq
    }
}

/// `log A_j`: the log ratio of the integrand at `δ_j = 1` to that at `δ_j = 0`,
/// all else fixed. `Impossible` when `δ_j = 1` would exceed the prior cap.
pub fn flip_ratio<Q: QuasiLikelihood + ?Sized>(
    prior: &PriorSpec,
    ql: &Q,
    state: &ModelState,
    j: usize,
) -> Result<LogDensity> {
    check_dims(prior.p(), &state.delta, &state.theta)?;
    let ll = ql.loglik_coordinate_delta(&state.delta, &state.theta, j)?;
    let others = state.delta.count() - usize::from(state.delta.get(j));
    if !prior.within_cap(others + 1) {
        return Ok(LogDensity::Impossible);
    }
    Ok(LogDensity::Finite(prior_flip_term(prior, state.theta[j]) + ll))
}

#[inline]
fn prior_flip_term(prior: &PriorSpec, theta_j: f64) -> f64 {
    prior.log_q_ratio() + 0.5 * (prior.rho1() / prior.rho0()).ln()
        - 0.5 * (prior.rho1() - prior.rho0()) * theta_j * theta_j
}

/// The density `u ↦ exp(ℓ((u,0)_δ) - (ρ₁/2)‖u‖²)` on the active block, handed
/// to an [`InnerKernel`].
pub struct ActiveTarget<'a, Q: QuasiLikelihood + ?Sized> {
    pub prior: &'a PriorSpec,
    pub ql: &'a Q,
    pub delta: &'a BinaryModel,
    pub active: Vec<usize>,
}

impl<Q: QuasiLikelihood + ?Sized> ActiveTarget<'_, Q> {
    pub fn dim(&self) -> usize {
        self.active.len()
    }

    pub fn embed(&self, u: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; self.delta.len()];
        for (k, &j) in self.active.iter().enumerate() {
            theta[j] = u[k];
        }
        theta
    }

    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        let ll = self.ql.sparsified_loglik(self.delta, &self.embed(u))?;
        Ok(ll - 0.5 * self.prior.rho1() * dot(u, u))
    }
}

/// A Markov kernel on the active block that leaves [`ActiveTarget`] invariant.
pub trait InnerKernel<Q: QuasiLikelihood + ?Sized> {
    fn step(&mut self, target: &ActiveTarget<'_, Q>, current: &[f64], rng: &mut SimRng) -> Result<Vec<f64>>;
}

/// Leaves the active block unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityKernel;

impl<Q: QuasiLikelihood + ?Sized> InnerKernel<Q> for IdentityKernel {
    fn step(&mut self, _: &ActiveTarget<'_, Q>, current: &[f64], _: &mut SimRng) -> Result<Vec<f64>> {
        Ok(current.to_vec())
    }
}

/// Gaussian random-walk Metropolis with step size `scale / √s`.
#[derive(Clone, Copy, Debug)]
pub struct RandomWalkMetropolis {
    pub scale: f64,
}

impl Default for RandomWalkMetropolis {
    fn default() -> Self {
        RandomWalkMetropolis { scale: 2.4 }
    }
}

impl<Q: QuasiLikelihood + ?Sized> InnerKernel<Q> for RandomWalkMetropolis {
    fn step(&mut self, target: &ActiveTarget<'_, Q>, current: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        let s = current.len();
        if s == 0 {
            return Ok(Vec::new());
        }
        let h = self.scale / (s as f64).sqrt();
        let proposal: Vec<f64> = current
            .iter()
            .map(|u| u + h * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_ratio = target.log_density(&proposal)? - target.log_density(current)?;
        let log_u = rng.random::<f64>().ln();
        Ok(if log_u < log_ratio { proposal } else { current.to_vec() })
    }
}

/// Exact draw from the Gaussian conditional of the active block; the generic
/// counterpart of [`step_theta_linear`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ConjugateGaussianKernel;

impl InnerKernel<GaussianRegressionQL> for ConjugateGaussianKernel {
    fn step(
        &mut self,
        target: &ActiveTarget<'_, GaussianRegressionQL>,
        _current: &[f64],
        rng: &mut SimRng,
    ) -> Result<Vec<f64>> {
        draw_active_block(target.prior, target.ql, &target.active, rng)
    }
}

fn refresh_inactive(prior: &PriorSpec, state: &mut ModelState, rng: &mut SimRng) {
    let sd = prior.rho0().sqrt().recip();
    for j in 0..state.theta.len() {
        if !state.delta.get(j) {
            state.theta[j] = sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Inactive coordinates are refreshed from the spike; the active block takes
/// one step of `kernel`.
pub fn step_theta_generic<Q, K>(
    prior: &PriorSpec,
    ql: &Q,
    state: &mut ModelState,
    kernel: &mut K,
    rng: &mut SimRng,
) -> Result<()>
where
    Q: QuasiLikelihood + ?Sized,
    K: InnerKernel<Q> + ?Sized,
{
    check_dims(prior.p(), &state.delta, &state.theta)?;
    let active = state.delta.active_indices();
    let current: Vec<f64> = active.iter().map(|&j| state.theta[j]).collect();
    let target = ActiveTarget {
        prior,
        ql,
        delta: &state.delta,
        active,
    };
    let next = kernel.step(&target, &current, rng)?;
    if next.len() != current.len() {
        return Err(Error::DimensionMismatch {
            context: "inner kernel output",
            expected: current.len(),
            found: next.len(),
        });
    }
    let active = target.active;
    for (k, j) in active.into_iter().enumerate() {
        state.theta[j] = next[k];
    }
    refresh_inactive(prior, state, rng);
    Ok(())
}

/// Draws `[θ]_A ~ N(m, Σ)` with `m = (X_A'X_A + σ²ρ₁I)^{-1} X_A'y` and
/// `Σ = σ² (X_A'X_A + σ²ρ₁I)^{-1}`.
fn draw_active_block(
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    active: &[usize],
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let s = active.len();
    if s == 0 {
        return Ok(Vec::new());
    }
    let sigma2 = ql.sigma2();
    let mut m = ql.gram_block(active);
    for k in 0..s {
        m[(k, k)] += sigma2 * prior.rho1();
    }
    let factor = match SpdFactor::new(&m) {
        Some(f) => f,
        None => {
            let jitter = 1e-10 * m.trace() / s as f64;
            for k in 0..s {
                m[(k, k)] += jitter;
            }
            SpdFactor::new(&m).ok_or_else(|| Error::CholeskyFailed {
                active: active.to_vec(),
            })?
        }
    };
    let b: Vec<f64> = active.iter().map(|&j| ql.xty()[j]).collect();
    let mean = factor.solve(&b);
    let z: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
    let noise = factor.solve_upper_t(&z);
    let sigma = sigma2.sqrt();
    Ok(mean.iter().zip(&noise).map(|(mu, e)| mu + sigma * e).collect())
}

/// Exact conditional draw of `θ` given `δ` for the Gaussian regression model.
pub fn step_theta_linear(
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    state: &mut ModelState,
    rng: &mut SimRng,
) -> Result<()> {
    check_dims(prior.p(), &state.delta, &state.theta)?;
    let active = state.delta.active_indices();
    let block = draw_active_block(prior, ql, &active, rng)?;
    for (k, j) in active.into_iter().enumerate() {
        state.theta[j] = block[k];
    }
    refresh_inactive(prior, state, rng);
    Ok(())
}

/// One sequential sweep of flip proposals over `j = 1..p`.
pub fn step_delta<Q: QuasiLikelihood>(
    prior: &PriorSpec,
    ql: &Q,
    state: &mut ModelState,
    config: &SamplerConfig,
    rng: &mut SimRng,
) -> Result<()> {
    let mut counts = AcceptanceCounts::new(prior.p());
    step_delta_counted(prior, ql, state, config, rng, &mut counts)
}

/// The tighter of the prior cap and the sampler cap.
pub fn effective_cap(prior: &PriorSpec, config: &SamplerConfig) -> Option<usize> {
    match (prior.cap(), config.cap) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

fn step_delta_counted<Q: QuasiLikelihood>(
    prior: &PriorSpec,
    ql: &Q,
    state: &mut ModelState,
    config: &SamplerConfig,
    rng: &mut SimRng,
    counts: &mut AcceptanceCounts,
) -> Result<()> {
    check_dims(prior.p(), &state.delta, &state.theta)?;
    let cap = effective_cap(prior, config);
    let log_h = if config.lazy_half { 0.5f64.ln() } else { 0.0 };
    let ModelState { delta, theta } = state;
    let mut scanner = ql.scanner(delta, theta);
    for j in 0..prior.p() {
        let iota: bool = rng.random();
        let on = delta.get(j);
        if on == iota {
            continue;
        }
        counts.proposed[j] += 1;
        if !on && cap.is_some_and(|c| delta.count() + 1 > c) {
            continue;
        }
        let log_a = prior_flip_term(prior, theta[j]) + scanner.coordinate_delta(delta, j);
        let log_accept = if on { (-log_a).min(0.0) } else { log_a.min(0.0) } + log_h;
        if rng.random::<f64>().ln() < log_accept {
            delta.set(j, !on);
            scanner.flipped(j, !on);
            counts.accepted[j] += 1;
        }
    }
    Ok(())
}

fn check_init(prior: &PriorSpec, init: &ModelState, config: &SamplerConfig) -> Result<()> {
    config.validate()?;
    check_dims(prior.p(), &init.delta, &init.theta)?;
    if init.theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("initial theta"));
    }
    let count = init.delta.count();
    if !prior.within_cap(count) || config.cap.is_some_and(|c| count > c) {
        return Err(Error::InvalidConfig(format!(
            "initial model has {count} active coordinates, above the cap"
        )));
    }
    Ok(())
}

fn chain_loop<Q, F>(
    prior: &PriorSpec,
    ql: &Q,
    init: ModelState,
    config: &SamplerConfig,
    rng: &mut SimRng,
    mut step_theta: F,
) -> Result<Trace>
where
    Q: QuasiLikelihood,
    F: FnMut(&mut ModelState, &mut SimRng) -> Result<()>,
{
    check_init(prior, &init, config)?;
    let mut state = init;
    let mut trace = Trace {
        acceptance_counts: AcceptanceCounts::new(prior.p()),
        ..Trace::default()
    };
    trace.delta_samples.reserve(config.n_samples());
    for k in 1..=config.n_iter {
        let start = Instant::now();
        step_theta(&mut state, rng)?;
        step_delta_counted(prior, ql, &mut state, config, rng, &mut trace.acceptance_counts)?;
        trace.timing.record(start.elapsed().as_secs_f64());
        if k > config.burn_in && (k - config.burn_in) % config.thin == 0 {
            trace.iterations.push(k);
            trace.delta_samples.push(state.delta.clone());
            trace.theta_samples.push(state.theta.clone());
        }
    }
    Ok(trace)
}

/// Runs the exact-conditional sampler for Gaussian regression.
pub fn run_chain(
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    init: ModelState,
    config: &SamplerConfig,
) -> Result<Trace> {
    let mut rng = rng::from_seed(config.seed);
    run_chain_with_rng(prior, ql, init, config, &mut rng)
}

pub fn run_chain_with_rng(
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    init: ModelState,
    config: &SamplerConfig,
    rng: &mut SimRng,
) -> Result<Trace> {
    chain_loop(prior, ql, init, config, rng, |state, rng| {
        step_theta_linear(prior, ql, state, rng)
    })
}

/// Runs the generic sampler with `kernel` on the active block.
pub fn run_chain_generic<Q, K>(
    prior: &PriorSpec,
    ql: &Q,
    init: ModelState,
    config: &SamplerConfig,
    kernel: &mut K,
) -> Result<Trace>
where
    Q: QuasiLikelihood,
    K: InnerKernel<Q>,
{
    let mut rng = rng::from_seed(config.seed);
    chain_loop(prior, ql, init, config, &mut rng, |state, rng| {
        step_theta_generic(prior, ql, state, kernel, rng)
    })
}

pub const LASSO_TOL: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

/// `σ √(2 log p / n)`
pub fn default_lasso_lambda(sigma2: f64, p: usize, n: usize) -> f64 {
    (sigma2 * 2.0 * (p.max(2) as f64).ln() / n as f64).sqrt()
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Coordinate-descent minimizer of `(1/2n)‖y - Xβ‖² + λ‖β‖₁`.
pub fn lasso(ql: &GaussianRegressionQL, lambda: f64, max_sweeps: usize) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("lasso penalty must be > 0, got {lambda}")));
    }
    let (n, p) = (ql.n(), ql.p());
    let nf = n as f64;
    let mut beta = vec![0.0; p];
    let mut r = ql.y().to_vec();
    for _ in 0..max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let norm = ql.col_sq_norms()[j] / nf;
            if norm == 0.0 {
                continue;
            }
            let col = ql.column(j);
            let old = beta[j];
            let z = dot(col, &r) / nf + norm * old;
            let new = soft_threshold(z, lambda) / norm;
            if new != old {
                crate::linalg::axpy(old - new, col, &mut r);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < LASSO_TOL {
            return Ok(beta);
        }
    }
    Err(Error::LassoNotConverged { sweeps: max_sweeps })
}

/// Largest violation of the lasso subgradient conditions at `beta`.
pub fn lasso_kkt_residual(ql: &GaussianRegressionQL, lambda: f64, beta: &[f64]) -> f64 {
    let nf = ql.n() as f64;
    let mut r = ql.y().to_vec();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            crate::linalg::axpy(-b, ql.column(j), &mut r);
        }
    }
    (0..ql.p())
        .map(|j| {
            let g = dot(ql.column(j), &r) / nf;
            if beta[j] != 0.0 {
                (g - lambda * beta[j].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Lasso fit turned into a sampler state: `δ` is the support, `θ` the
/// coefficients (zero off the support).
pub fn lasso_init(ql: &GaussianRegressionQL, lambda: f64) -> Result<ModelState> {
    let beta = lasso(ql, lambda, LASSO_MAX_SWEEPS)?;
    let delta = BinaryModel::from_bits(beta.iter().map(|b| *b != 0.0).collect());
    ModelState::new(delta, beta)
}
