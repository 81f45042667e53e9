//! One-call regression fits by MCMC or by any of the three variational
//! families, reduced to a common [`PosteriorSummary`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{batch_means_se, median};
use crate::error::{Error, Result};
use crate::model::{GaussianRegressionQL, ModelState, PriorSpec};
use crate::rng::SimRng;
use crate::sampler::{self, default_lasso_lambda, effective_cap, SamplerConfig, Trace};
use crate::varapprox::{self, SparsityTemplate, VariationalState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mcmc,
    Skinny,
    Midsize,
    Full,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mcmc => "mcmc",
            Method::Skinny => "skinny",
            Method::Midsize => "midsize",
            Method::Full => "full",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcmc" => Ok(Method::Mcmc),
            "skinny" => Ok(Method::Skinny),
            "midsize" => Ok(Method::Midsize),
            "full" => Ok(Method::Full),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub sampler: SamplerConfig,
    pub cavi_max_iter: usize,
    pub cavi_tol: f64,
    pub template_size: usize,
    /// Lasso penalty for initialization; `None` uses `σ √(2 log p / n)`.
    pub lasso_lambda: Option<f64>,
}

impl FitSettings {
    pub fn new(sampler: SamplerConfig) -> Self {
        FitSettings {
            sampler,
            cavi_max_iter: varapprox::DEFAULT_MAX_ITER,
            cavi_tol: varapprox::DEFAULT_TOL,
            template_size: 100,
            lasso_lambda: None,
        }
    }
}

/// Marginal posterior summaries of a regression fit. `theta_mean` is the
/// mean of `θ_δ`; `theta_var` is the marginal variance of `θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub method: Method,
    pub inclusion_probs: Vec<f64>,
    pub theta_mean: Vec<f64>,
    pub theta_var: Vec<f64>,
    /// Batch-means standard errors of the inclusion frequencies (MCMC only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inclusion_se: Option<Vec<f64>>,
    pub median_model_size: f64,
    pub iterations: usize,
    pub converged: Option<bool>,
    pub elbo: Option<f64>,
}

impl PosteriorSummary {
    pub fn from_trace(trace: &Trace) -> Result<Self> {
        let first = trace
            .theta_samples
            .first()
            .ok_or_else(|| Error::InvalidConfig("trace has no samples".into()))?;
        let p = first.len();
        let n = trace.len() as f64;
        let mut mean = vec![0.0; p];
        let mut sparse_mean = vec![0.0; p];
        for (d, t) in trace.delta_samples.iter().zip(&trace.theta_samples) {
            for j in 0..p {
                mean[j] += t[j];
                if d.get(j) {
                    sparse_mean[j] += t[j];
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        sparse_mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for t in &trace.theta_samples {
            for j in 0..p {
                var[j] += (t[j] - mean[j]).powi(2);
            }
        }
        let denom = (n - 1.0).max(1.0);
        var.iter_mut().for_each(|v| *v /= denom);
        let mut sizes: Vec<f64> = trace.model_sizes().into_iter().map(|s| s as f64).collect();
        let inclusion_se = (0..p)
            .map(|j| {
                let ind: Vec<f64> = trace.delta_samples.iter().map(|d| d.get(j) as u8 as f64).collect();
                batch_means_se(&ind)
            })
            .collect();
        Ok(PosteriorSummary {
            method: Method::Mcmc,
            inclusion_probs: trace.inclusion_frequencies(),
            theta_mean: sparse_mean,
            theta_var: var,
            inclusion_se: Some(inclusion_se),
            median_model_size: median(&mut sizes),
            iterations: trace.timing.iterations,
            converged: None,
            elbo: None,
        })
    }

    pub fn from_variational(method: Method, state: &VariationalState, iterations: usize, converged: bool, elbo: f64) -> Self {
        PosteriorSummary {
            method,
            inclusion_probs: state.alpha.clone(),
            theta_mean: state.alpha.iter().zip(&state.mu).map(|(a, m)| a * m).collect(),
            theta_var: state.c_diag().to_vec(),
            inclusion_se: None,
            median_model_size: poisson_binomial_median(&state.alpha),
            iterations,
            converged: Some(converged),
            elbo: Some(elbo),
        }
    }

    pub fn expected_model_size(&self) -> f64 {
        self.inclusion_probs.iter().sum()
    }
}

/// Median of a sum of independent Bernoulli variables.
pub fn poisson_binomial_median(probs: &[f64]) -> f64 {
    let mut dist = vec![1.0];
    for &q in probs {
        let mut next = vec![0.0; dist.len() + 1];
        for (k, w) in dist.iter().enumerate() {
            next[k] += w * (1.0 - q);
            next[k + 1] += w * q;
        }
        // trailing mass below double precision never affects the median
        while next.len() > 1 && *next.last().unwrap() < 1e-300 {
            next.pop();
        }
        dist = next;
    }
    let mut acc = 0.0;
    for (k, w) in dist.iter().enumerate() {
        acc += w;
        if acc >= 0.5 {
            return k as f64;
        }
    }
    (dist.len() - 1) as f64
}

pub fn lasso_lambda(ql: &GaussianRegressionQL, settings: &FitSettings) -> f64 {
    settings
        .lasso_lambda
        .unwrap_or_else(|| default_lasso_lambda(ql.sigma2(), ql.p(), ql.n()))
}

/// Template for the given method: empty, full, or the lasso support topped up
/// with the largest `|⟨X_j, y⟩|` to `template_size` coordinates.
pub fn template_for(method: Method, ql: &GaussianRegressionQL, init: &ModelState, template_size: usize) -> Result<SparsityTemplate> {
    let p = ql.p();
    match method {
        Method::Skinny | Method::Mcmc => Ok(SparsityTemplate::skinny(p)),
        Method::Full => Ok(SparsityTemplate::full(p)),
        Method::Midsize => SparsityTemplate::midsize(ql, &init.delta, template_size.max(init.delta.count())),
    }
}

#[derive(Clone, Debug)]
pub struct RegressionFit {
    pub summary: PosteriorSummary,
    pub trace: Option<Trace>,
    pub variational: Option<(SparsityTemplate, VariationalState)>,
}

/// Fits the regression quasi-posterior, starting from the lasso solution.
pub fn fit_regression(
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    method: Method,
    settings: &FitSettings,
    rng: &mut SimRng,
) -> Result<RegressionFit> {
    let lambda = lasso_lambda(ql, settings);
    match method {
        Method::Mcmc => {
            let init = lasso_start(ql, lambda, effective_cap(prior, &settings.sampler))?;
            let trace = sampler::run_chain_with_rng(prior, ql, init, &settings.sampler, rng)?;
            Ok(RegressionFit {
                summary: PosteriorSummary::from_trace(&trace)?,
                trace: Some(trace),
                variational: None,
            })
        }
        _ => {
            let init = sampler::lasso_init(ql, lambda)?;
            let tmpl = template_for(method, ql, &init, settings.template_size)?;
            let state = VariationalState::from_lasso(&init, prior, ql.n(), &tmpl)?;
            let fit = varapprox::run_cavi(prior, ql, &tmpl, state, settings.cavi_max_iter, settings.cavi_tol)?;
            let elbo = varapprox::elbo(&fit.state, prior, ql, &tmpl)?;
            Ok(RegressionFit {
                summary: PosteriorSummary::from_variational(method, &fit.state, fit.iterations, fit.converged, elbo),
                trace: None,
                variational: Some((tmpl, fit.state)),
            })
        }
    }
}

/// Lasso solution as a sampler state, with the support cut down to the `cap`
/// largest coefficients when a cap is given.
pub fn lasso_start(ql: &GaussianRegressionQL, lambda: f64, cap: Option<usize>) -> Result<ModelState> {
    let mut init = sampler::lasso_init(ql, lambda)?;
    if let Some(c) = cap {
        truncate_support(&mut init, c);
    }
    Ok(init)
}

/// Keeps the `cap` largest coefficients of the support.
fn truncate_support(state: &mut ModelState, cap: usize) {
    let mut active = state.delta.active_indices();
    if active.len() <= cap {
        return;
    }
    active.sort_by(|&a, &b| state.theta[b].abs().total_cmp(&state.theta[a].abs()));
    for &j in &active[cap..] {
        state.delta.set(j, false);
        state.theta[j] = 0.0;
    }
}
