//! Sparse leading principal component through a regression on the scaled
//! first left singular vector: `y = λ₁ U₁ = X V₁`, fitted by the linear
//! sampler under a capped spike-and-slab prior.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{dot, leading_svd};
use crate::fit::lasso_start;
use crate::model::{GaussianRegressionQL, PriorSpec};
use crate::sampler::{default_lasso_lambda, effective_cap, run_chain, SamplerConfig, Trace};

/// `y = λ₁ U₁` and `V₁`, signed so that the largest-magnitude entry of `V₁` is
/// positive. `tied` flags a leading singular value that is not separated
/// from the next one (relative gap below `1e-10`).
#[derive(Clone, Debug, PartialEq)]
pub struct PcResponse {
    pub y: Vec<f64>,
    pub v1: Vec<f64>,
    pub sigma1: f64,
    pub tied: bool,
}

pub fn pc_response(x: &DMatrix<f64>) -> Result<PcResponse> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("data matrix"));
    }
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidConfig("data matrix is zero".into()));
    }
    let svd = leading_svd(x).ok_or_else(|| Error::Kernel("singular value decomposition failed".into()))?;
    let mut v1 = svd.v1;
    let mut u1 = svd.u1;
    let pivot = (0..v1.len())
        .max_by(|&a, &b| v1[a].abs().total_cmp(&v1[b].abs()))
        .unwrap_or(0);
    if v1[pivot] < 0.0 {
        v1.iter_mut().for_each(|v| *v = -*v);
        u1.iter_mut().for_each(|v| *v = -*v);
    }
    let y = u1.iter().map(|u| svd.sigma1 * u).collect();
    Ok(PcResponse {
        y,
        v1,
        sigma1: svd.sigma1,
        tied: svd.sigma1 - svd.sigma2 <= 1e-10 * svd.sigma1,
    })
}

/// Spectral norm of `θθ'/‖θ‖² - θ⋆θ⋆'/‖θ⋆‖²`.
///
/// In the orthonormal basis `{θ̂, (θ̂⋆ - cθ̂)/s}` of the span, with
/// `c = ⟨θ̂, θ̂⋆⟩` and `s = √(1 - c²)`, the difference is
/// `[[s², -cs], [-cs, -s²]]`; the larger absolute eigenvalue of that 2×2
/// block is returned.
pub fn projection_error(theta: &[f64], theta_star: &[f64]) -> Result<f64> {
    if theta.len() != theta_star.len() {
        return Err(Error::DimensionMismatch {
            context: "projection direction",
            expected: theta_star.len(),
            found: theta.len(),
        });
    }
    let (na, nb) = (dot(theta, theta).sqrt(), dot(theta_star, theta_star).sqrt());
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::InvalidConfig("projection error of a zero vector".into()));
    }
    let c = (dot(theta, theta_star) / (na * nb)).clamp(-1.0, 1.0);
    let s2 = (1.0 - c * c).max(0.0);
    let s = s2.sqrt();
    let (a, b) = (s2, -c * s);
    // eigenvalues of the trace-free symmetric [[a, b], [b, -a]] are ±√(a² + b²)
    Ok((a * a + b * b).sqrt().min(1.0))
}

#[derive(Clone, Debug)]
pub struct SpcaFit {
    /// Samples with `θ_δ` rescaled to unit norm and aligned with `v1`.
    pub trace: Trace,
    pub v1: Vec<f64>,
    /// Sign of `⟨v1, θ⋆⟩` when a truth is supplied, else `+1`.
    pub sign: f64,
    pub tied: bool,
    pub proj_error_samples: Option<Vec<f64>>,
}

impl SpcaFit {
    pub fn mean_projection_error(&self) -> Option<f64> {
        self.proj_error_samples
            .as_ref()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn posterior_mean_abs(&self) -> Vec<f64> {
        let p = self.v1.len();
        let mut m = vec![0.0; p];
        for t in &self.trace.theta_samples {
            for j in 0..p {
                m[j] += t[j].abs();
            }
        }
        let n = self.trace.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// Runs the capped linear sampler on `(X, pc_response(X).y)`, started from
/// the lasso solution with penalty `σ √(2 log p / n)` cut to the cap.
///
/// Each stored sample is `θ_δ/‖θ_δ‖` (or `θ/‖θ‖` when `δ` is empty), flipped
/// to have a non-negative inner product with `V₁`.
pub fn fit_spca(
    x: &DMatrix<f64>,
    prior: &PriorSpec,
    sigma2: f64,
    config: &SamplerConfig,
    truth: Option<&[f64]>,
) -> Result<SpcaFit> {
    if prior.cap().is_none() && config.cap.is_none() {
        return Err(Error::InvalidConfig("sparse PCA requires a model-size cap".into()));
    }
    let pc = pc_response(x)?;
    let ql = GaussianRegressionQL::new(x.clone(), pc.y.clone(), sigma2)?;
    let lambda = default_lasso_lambda(sigma2, ql.p(), ql.n());
    let init = lasso_start(&ql, lambda, effective_cap(prior, config))?;
    let mut trace = run_chain(prior, &ql, init, config)?;
    for (d, t) in trace.delta_samples.iter().zip(trace.theta_samples.iter_mut()) {
        if d.count() > 0 {
            for (j, v) in t.iter_mut().enumerate() {
                if !d.get(j) {
                    *v = 0.0;
                }
            }
        }
        let norm = dot(t, t).sqrt();
        let sign = if dot(t, &pc.v1) < 0.0 { -1.0 } else { 1.0 };
        if norm > 0.0 {
            t.iter_mut().for_each(|v| *v *= sign / norm);
        }
    }
    let (sign, proj_error_samples) = match truth {
        Some(star) => {
            let errs = trace
                .theta_samples
                .iter()
                .map(|t| projection_error(t, star))
                .collect::<Result<Vec<_>>>()?;
            (if dot(&pc.v1, star) < 0.0 { -1.0 } else { 1.0 }, Some(errs))
        }
        None => (1.0, None),
    };
    Ok(SpcaFit {
        trace,
        v1: pc.v1,
        sign,
        tied: pc.tied,
        proj_error_samples,
    })
}
