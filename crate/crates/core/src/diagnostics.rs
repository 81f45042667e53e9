//! Posterior diagnostics: Gaussian KL divergences, the Bernstein-von Mises
//! limit and an estimate of the KL divergence to it, contraction rates,
//! model-selection summaries and an exact enumeration oracle for small `p`.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp, SpdFactor};
use crate::model::{BinaryModel, GaussianRegressionQL, PriorSpec};
use crate::rng;
use crate::sampler::Trace;

/// `KL(N(μ₁, Σ₁) ‖ N(μ₂, Σ₂))`
pub fn gaussian_kl(mu1: &[f64], s1: &DMatrix<f64>, mu2: &[f64], s2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    for (context, found) in [
        ("second mean", mu2.len()),
        ("first covariance", s1.nrows()),
        ("first covariance", s1.ncols()),
        ("second covariance", s2.nrows()),
        ("second covariance", s2.ncols()),
    ] {
        if found != d {
            return Err(Error::DimensionMismatch {
                context,
                expected: d,
                found,
            });
        }
    }
    let f1 = SpdFactor::new(s1).ok_or_else(|| Error::NotPositiveDefinite("first covariance".into()))?;
    let f2 = SpdFactor::new(s2).ok_or_else(|| Error::NotPositiveDefinite("second covariance".into()))?;
    let diff: Vec<f64> = mu2.iter().zip(mu1).map(|(a, b)| a - b).collect();
    let mut trace = 0.0;
    for j in 0..d {
        let col: Vec<f64> = s1.column(j).iter().copied().collect();
        trace += f2.solve(&col)[j];
    }
    let kl = 0.5 * (f2.inv_quad(&diff) + f2.log_det() - f1.log_det() + trace - d as f64);
    Ok(kl.max(0.0))
}

/// The limit law: all mass on `δ⋆`, `[θ]_δ⋆ ~ N(θ̂⋆, I^{-1})`, and the
/// remaining coordinates i.i.d. `N(0, 1/ρ₀)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BvmLimit {
    pub delta_star: BinaryModel,
    pub theta_hat: Vec<f64>,
    pub info: DMatrix<f64>,
    pub rho0: f64,
}

/// Least squares on the support of `δ⋆`, with information `X_δ⋆'X_δ⋆ / σ²`.
pub fn bvm_limit_from_fit(ql: &GaussianRegressionQL, delta_star: &BinaryModel, prior: &PriorSpec) -> Result<BvmLimit> {
    if delta_star.len() != ql.p() {
        return Err(Error::DimensionMismatch {
            context: "target model",
            expected: ql.p(),
            found: delta_star.len(),
        });
    }
    let support = delta_star.active_indices();
    let g = ql.gram_block(&support);
    let s = support.len();
    if s > 0 {
        let eig = SymmetricEigen::new(g.clone()).eigenvalues;
        let max = eig.max();
        if !(eig.min() > 1e-12 * max) {
            return Err(Error::RankDeficient);
        }
    }
    let factor = SpdFactor::new(&g).ok_or(Error::RankDeficient)?;
    let b: Vec<f64> = support.iter().map(|&j| ql.xty()[j]).collect();
    let theta_hat = factor.solve(&b);
    Ok(BvmLimit {
        delta_star: delta_star.clone(),
        theta_hat,
        info: g / ql.sigma2(),
        rho0: prior.rho0(),
    })
}

pub const DEFAULT_KL_DRAWS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `KL(Π⋆^∞ ‖ Π)` for the Gaussian regression
/// quasi-posterior, from `n_draws` exact draws of the limit and the chain's
/// visits to `δ⋆`.
///
/// With `R(θ) = -(ρ₁/2)(‖θ_δ⋆‖² - ‖θ̂⋆‖²)` the divergence equals
/// `E_{Π⋆^∞}[-R] - log E_Π[e^{-R} 1{δ = δ⋆}]`.
pub fn kl_to_bvm(
    trace: &Trace,
    limit: &BvmLimit,
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    n_draws: usize,
    seed: u64,
) -> Result<KlEstimate> {
    let p = ql.p();
    if limit.delta_star.len() != p {
        return Err(Error::DimensionMismatch {
            context: "target model",
            expected: p,
            found: limit.delta_star.len(),
        });
    }
    if n_draws < 2 {
        return Err(Error::InvalidConfig("at least two limit draws are needed".into()));
    }
    let support = limit.delta_star.active_indices();
    let half_rho1 = 0.5 * prior.rho1();
    let hat_sq = dot(&limit.theta_hat, &limit.theta_hat);

    let log_w: Vec<Option<f64>> = trace
        .delta_samples
        .iter()
        .zip(&trace.theta_samples)
        .map(|(d, t)| {
            (*d == limit.delta_star).then(|| {
                let sq: f64 = support.iter().map(|&j| t[j] * t[j]).sum();
                half_rho1 * (sq - hat_sq)
            })
        })
        .collect();
    let visits: Vec<f64> = log_w.iter().flatten().copied().collect();
    if visits.is_empty() {
        return Err(Error::NoTargetVisits);
    }
    let n = log_w.len() as f64;
    let shift = visits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w
        .iter()
        .map(|v| v.map_or(0.0, |l| (l - shift).exp()))
        .collect();
    let w_mean = w.iter().sum::<f64>() / n;
    let log_norm = log_sum_exp(&visits) - n.ln();
    let norm_se = batch_means_se(&w) / w_mean;

    let mut term = 0.0;
    let mut term_sq = 0.0;
    if !support.is_empty() {
        let factor = SpdFactor::new(&limit.info)
            .ok_or_else(|| Error::NotPositiveDefinite("information matrix".into()))?;
        let mut rng = rng::from_seed(seed);
        let s = support.len();
        for _ in 0..n_draws {
            let z: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
            let e = factor.solve_upper_t(&z);
            let sq: f64 = limit.theta_hat.iter().zip(&e).map(|(h, e)| (h + e) * (h + e)).sum();
            let v = half_rho1 * (sq - hat_sq);
            term += v;
            term_sq += v * v;
        }
    }
    let m = n_draws as f64;
    let term_mean = term / m;
    let term_var = (term_sq / m - term_mean * term_mean).max(0.0) / (m - 1.0);
    Ok(KlEstimate {
        estimate: term_mean - log_norm,
        std_error: (term_var + norm_se * norm_se).sqrt(),
    })
}

/// `2σ² √(s̄ + s⋆) ρ̄ / (n v)` where `v` is the restricted eigenvalue bound at
/// sparsity `s̄ + s⋆`.
pub fn contraction_epsilon(n: usize, sbar: usize, sstar: usize, sigma2: f64, vmin: f64, rho_bar: f64) -> Result<f64> {
    if n == 0 || sbar + sstar == 0 || !(sigma2 > 0.0) || !(vmin > 0.0) || !(rho_bar > 0.0) {
        return Err(Error::InvalidConfig("contraction rate arguments must be positive".into()));
    }
    Ok(2.0 * sigma2 * ((sbar + sstar) as f64).sqrt() * rho_bar / (n as f64 * vmin))
}

pub const MAX_ENUMERATION_DIM: usize = 20;

/// Exact posterior over all `2^p` models; index `k` stores the model whose
/// coordinate `j` is bit `j` of `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactPosterior {
    p: usize,
    log_probs: Vec<f64>,
}

impl ExactPosterior {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    fn mask(model: &BinaryModel) -> u64 {
        model.active_indices().iter().fold(0u64, |m, &j| m | (1 << j))
    }

    pub fn prob(&self, model: &BinaryModel) -> f64 {
        self.log_probs[Self::mask(model) as usize].exp()
    }

    pub fn total(&self) -> f64 {
        self.log_probs.iter().map(|l| l.exp()).sum()
    }

    pub fn inclusion_probs(&self) -> Vec<f64> {
        let mut incl = vec![0.0; self.p];
        for (k, l) in self.log_probs.iter().enumerate() {
            let w = l.exp();
            for (j, v) in incl.iter_mut().enumerate() {
                if k >> j & 1 == 1 {
                    *v += w;
                }
            }
        }
        incl
    }

    pub fn mode(&self) -> BinaryModel {
        let k = (0..self.log_probs.len())
            .max_by(|&a, &b| self.log_probs[a].total_cmp(&self.log_probs[b]))
            .unwrap_or(0);
        BinaryModel::from_mask(self.p, k as u64)
    }
}

/// Integrates `θ` out of the Gaussian regression quasi-posterior for every
/// model. The spike part integrates to one, so the result does not depend on
/// `ρ₀`.
pub fn enumerate_exact(prior: &PriorSpec, ql: &GaussianRegressionQL) -> Result<ExactPosterior> {
    let p = ql.p();
    if p > MAX_ENUMERATION_DIM {
        return Err(Error::EnumerationTooLarge(p));
    }
    if prior.p() != p {
        return Err(Error::DimensionMismatch {
            context: "prior dimension",
            expected: p,
            found: prior.p(),
        });
    }
    let sigma2 = ql.sigma2();
    let (lq, l1q) = (prior.log_q(), prior.log_one_minus_q());
    let mut log_w = Vec::with_capacity(1 << p);
    for k in 0..(1u64 << p) {
        let model = BinaryModel::from_mask(p, k);
        let s = model.count();
        if !prior.within_cap(s) {
            log_w.push(f64::NEG_INFINITY);
            continue;
        }
        let mut v = s as f64 * lq + (p - s) as f64 * l1q;
        if s > 0 {
            let idx = model.active_indices();
            let mut prec = ql.gram_block(&idx) / sigma2;
            for a in 0..s {
                prec[(a, a)] += prior.rho1();
            }
            let f = SpdFactor::new(&prec).ok_or_else(|| Error::CholeskyFailed { active: idx.clone() })?;
            let b: Vec<f64> = idx.iter().map(|&j| ql.xty()[j] / sigma2).collect();
            v += 0.5 * s as f64 * prior.rho1().ln() - 0.5 * f.log_det() + 0.5 * f.inv_quad(&b);
        }
        log_w.push(v);
    }
    let z = log_sum_exp(&log_w);
    Ok(ExactPosterior {
        p,
        log_probs: log_w.into_iter().map(|l| l - z).collect(),
    })
}

/// Batch-means standard error of the sample mean of a (possibly
/// autocorrelated) series, using `⌊N^{1/3}⌋` batches of length about
/// `N^{2/3}`. Shorter batches understate the error of slowly mixing
/// inclusion indicators.
pub fn batch_means_se(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return f64::NAN;
    }
    let b = ((n as f64).cbrt().floor() as usize).max(2);
    let size = n / b;
    let means: Vec<f64> = (0..b)
        .map(|k| x[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub inclusion_probs: Vec<f64>,
    pub mode_model: BinaryModel,
    pub prob_true_model: f64,
    pub fdr: f64,
    pub fnr: f64,
    pub median_model_size: f64,
}

impl SelectionReport {
    /// Median-probability model: inclusion probability at least 1/2.
    pub fn median_probability_model(&self) -> BinaryModel {
        BinaryModel::from_bits(self.inclusion_probs.iter().map(|&v| v >= 0.5).collect())
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn selection_report(trace: &Trace, truth: &BinaryModel) -> Result<SelectionReport> {
    let first = trace
        .delta_samples
        .first()
        .ok_or_else(|| Error::InvalidConfig("trace has no samples".into()))?;
    if first.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "true model",
            expected: first.len(),
            found: truth.len(),
        });
    }
    let inclusion_probs = trace.inclusion_frequencies();
    let mut counts: HashMap<&BinaryModel, usize> = HashMap::new();
    let mut mode_model = first;
    let mut best = 0;
    for d in &trace.delta_samples {
        let c = counts.entry(d).or_insert(0);
        *c += 1;
        if *c > best {
            best = *c;
            mode_model = d;
        }
    }
    let n = trace.len() as f64;
    let prob_true_model = *counts.get(truth).unwrap_or(&0) as f64 / n;
    let mut sizes: Vec<f64> = trace.model_sizes().into_iter().map(|s| s as f64).collect();
    let mut report = SelectionReport {
        inclusion_probs,
        mode_model: mode_model.clone(),
        prob_true_model,
        fdr: 0.0,
        fnr: 0.0,
        median_model_size: median(&mut sizes),
    };
    let selected = report.median_probability_model();
    let (fdr, fnr) = error_rates(&selected, truth);
    report.fdr = fdr;
    report.fnr = fnr;
    Ok(report)
}

/// False discovery and false negative proportions, each 0 when its
/// denominator is empty.
pub fn error_rates(selected: &BinaryModel, truth: &BinaryModel) -> (f64, f64) {
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (s, t) in selected.bits().iter().zip(truth.bits()) {
        match (s, t) {
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let fdr = if selected.count() == 0 { 0.0 } else { fp as f64 / selected.count() as f64 };
    let fnr = if truth.count() == 0 { 0.0 } else { fneg as f64 / truth.count() as f64 };
    (fdr, fnr)
}
