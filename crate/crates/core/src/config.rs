//! Experiment configuration shared by the simulators, the fitting commands and
//! the benchmark harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{FitSettings, Method};
use crate::model::{PriorSpec, DEFAULT_GRAM_THRESHOLD};
use crate::sampler::SamplerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Regression,
    Ggm,
    Spca,
    Benchmark,
}

/// How the two directed inclusion probabilities of an edge are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeRule {
    #[default]
    Max,
    Min,
    Mean,
}

impl EdgeRule {
    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            EdgeRule::Max => a.max(b),
            EdgeRule::Min => a.min(b),
            EdgeRule::Mean => 0.5 * (a + b),
        }
    }
}

fn default_psi() -> f64 {
    0.0
}
fn default_vartheta() -> f64 {
    20.0
}
fn default_s_star() -> usize {
    10
}
fn default_u() -> f64 {
    2.0
}
fn default_sigma2() -> f64 {
    1.0
}
fn default_n_iter() -> usize {
    5000
}
fn default_one() -> usize {
    1
}
fn default_template_size() -> usize {
    100
}
fn default_true() -> bool {
    true
}
fn default_va_iters() -> usize {
    50
}
fn default_cavi_tol() -> f64 {
    crate::varapprox::DEFAULT_TOL
}
fn default_timed_iters() -> usize {
    20
}
fn default_gram_threshold() -> usize {
    DEFAULT_GRAM_THRESHOLD
}
fn default_p_grid() -> Vec<usize> {
    vec![500, 1000, 2000, 4000]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub p: usize,
    pub n: usize,
    #[serde(default = "default_psi")]
    pub psi: f64,
    #[serde(default = "default_vartheta")]
    pub vartheta: f64,
    #[serde(default = "default_s_star")]
    pub s_star: usize,
    #[serde(default = "default_u")]
    pub u: f64,
    /// Slab precision; `√(log p / n)` when absent.
    #[serde(default)]
    pub rho1: Option<f64>,
    /// Spike variance; `1/(4n)` when absent.
    #[serde(default)]
    pub rho0_inv: Option<f64>,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    /// `n_iter / 2` when absent.
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default = "default_one")]
    pub thin: usize,
    #[serde(default = "default_true")]
    pub lazy_half: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub replications: usize,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_template_size")]
    pub template_size: usize,
    /// Upper bound on the model size; required for sparse PCA.
    #[serde(default)]
    pub cap: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_va_iters")]
    pub va_iters: usize,
    #[serde(default = "default_cavi_tol")]
    pub cavi_tol: f64,
    #[serde(default)]
    pub edge_rule: EdgeRule,
    /// Worker threads for parallel work; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_gram_threshold")]
    pub gram_threshold: usize,
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<usize>,
    /// CAVI iterations actually timed per benchmark cell; totals are extrapolated.
    #[serde(default = "default_timed_iters")]
    pub bench_max_timed_iters: usize,
}

fn default_method() -> Method {
    Method::Mcmc
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if self.n < 2 {
            return bad("n must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.psi) {
            return bad(format!("psi must lie in [0, 1), got {}", self.psi));
        }
        if !(self.vartheta > 0.0) || !self.vartheta.is_finite() {
            return bad(format!("vartheta must be > 0, got {}", self.vartheta));
        }
        if self.s_star > self.p && self.mode != Mode::Ggm {
            return bad(format!("s_star ({}) exceeds p ({})", self.s_star, self.p));
        }
        if !(self.u > 0.0) || !self.u.is_finite() {
            return bad(format!("u must be > 0, got {}", self.u));
        }
        if let Some(r) = self.rho1 {
            if !(r > 0.0) || !r.is_finite() {
                return bad(format!("rho1 must be > 0, got {r}"));
            }
        }
        if let Some(r) = self.rho0_inv {
            if !(r > 0.0) || !r.is_finite() {
                return bad(format!("rho0_inv must be > 0, got {r}"));
            }
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return bad(format!("sigma2 must be > 0, got {}", self.sigma2));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.va_iters == 0 {
            return bad("va_iters must be at least 1".into());
        }
        if !(self.cavi_tol >= 0.0) {
            return bad("cavi_tol must be non-negative".into());
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) || !l.is_finite() {
                return bad(format!("lambda must be > 0, got {l}"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if let Some(c) = self.cap {
            if c == 0 || c > self.p {
                return bad(format!("cap must lie in [1, {}], got {c}", self.p));
            }
        }
        if self.mode == Mode::Spca {
            if self.cap.is_none() {
                return bad("sparse PCA requires an explicit cap".into());
            }
            if self.p < 5 {
                return bad("sparse PCA simulation needs p >= 5".into());
            }
        }
        if self.mode == Mode::Benchmark {
            if self.p_grid.is_empty() || self.p_grid.contains(&0) {
                return bad("p_grid must list positive dimensions".into());
            }
            if self.bench_max_timed_iters == 0 {
                return bad("bench_max_timed_iters must be at least 1".into());
            }
            if self.p_grid.iter().any(|&p| p < self.s_star) {
                return bad("every p in p_grid must be at least s_star".into());
            }
        }
        self.sampler_config().validate()
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_iter / 2)
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_iter: self.n_iter,
            seed: self.seed,
            burn_in: self.burn_in(),
            thin: self.thin,
            lazy_half: self.lazy_half,
            cap: self.cap,
        }
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            sampler: self.sampler_config(),
            cavi_max_iter: self.va_iters,
            cavi_tol: self.cavi_tol,
            template_size: self.template_size,
            lasso_lambda: self.lambda,
        }
    }

    /// Prior for a regression with `p` predictors and `n` observations, using
    /// the configured overrides.
    pub fn prior_for(&self, p: usize, n: usize) -> Result<PriorSpec> {
        let rho1 = self.rho1.unwrap_or_else(|| ((p.max(2) as f64).ln() / n as f64).sqrt());
        let rho0 = self.rho0_inv.map_or(4.0 * n as f64, |v| 1.0 / v);
        let prior = PriorSpec::new(rho0, rho1, self.u, p)?;
        match self.cap {
            Some(c) => prior.with_cap(c.min(p)),
            None => Ok(prior),
        }
    }
}
