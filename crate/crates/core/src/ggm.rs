//! Gaussian graphical model selection by neighborhood regression: each
//! variable is regressed on all others under the spike-and-slab
//! quasi-posterior, and the directed inclusion probabilities are merged into
//! edge probabilities.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EdgeRule;
use crate::error::{Error, Result};
use crate::fit::{fit_regression, FitSettings, Method, PosteriorSummary};
use crate::model::{GaussianRegressionQL, PriorSpec, DEFAULT_GRAM_THRESHOLD};
use crate::rng;

/// Prior and fitting options shared by all node regressions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GgmSettings {
    pub fit: FitSettings,
    pub method: Method,
    pub u: f64,
    /// `√(log p / n)` when absent.
    pub rho1: Option<f64>,
    /// `4n` when absent.
    pub rho0: Option<f64>,
    pub sigma2: f64,
    pub edge_rule: EdgeRule,
    /// Known diagonal of the precision matrix; ones when absent.
    pub precision_diag: Option<Vec<f64>>,
    /// Worker threads; the global pool when absent.
    pub threads: Option<usize>,
}

impl GgmSettings {
    pub fn new(fit: FitSettings, method: Method) -> Self {
        GgmSettings {
            fit,
            method,
            u: 2.0,
            rho1: None,
            rho0: None,
            sigma2: 1.0,
            edge_rule: EdgeRule::Max,
            precision_diag: None,
            threads: None,
        }
    }

    /// Prior for a node regression with `p` predictors.
    pub fn prior(&self, p: usize, n: usize) -> Result<PriorSpec> {
        let rho1 = self.rho1.unwrap_or_else(|| ((p.max(2) as f64).ln() / n as f64).sqrt());
        let rho0 = self.rho0.unwrap_or(4.0 * n as f64);
        PriorSpec::new(rho0, rho1, self.u, p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GgmFit {
    pub node_fits: Vec<PosteriorSummary>,
    pub edge_probs: DMatrix<f64>,
    pub precision_estimate: DMatrix<f64>,
}

impl GgmFit {
    /// Edges `(i, j)` with `i < j` whose probability is at least `threshold`.
    pub fn edges(&self, threshold: f64) -> Vec<(usize, usize)> {
        let d = self.edge_probs.nrows();
        let mut out = Vec::new();
        for i in 0..d {
            for j in (i + 1)..d {
                if self.edge_probs[(i, j)] >= threshold {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Splits `z` into column `j` and the remaining columns.
fn split_node(z: &DMatrix<f64>, j: usize) -> (DMatrix<f64>, Vec<f64>) {
    let y = z.column(j).iter().copied().collect();
    (z.clone().remove_column(j), y)
}

/// Regression of variable `j` on all other columns of `z`; entry `k` of the
/// summary refers to column `k` if `k < j` and to column `k + 1` otherwise.
pub fn node_regression(z: &DMatrix<f64>, j: usize, settings: &GgmSettings, seed: u64) -> Result<PosteriorSummary> {
    let (n, d) = z.shape();
    if j >= d {
        return Err(Error::IndexOutOfRange { index: j, dim: d });
    }
    if n < 2 || d < 2 {
        return Err(Error::InvalidConfig("need at least two rows and two variables".into()));
    }
    let col = z.column(j);
    let first = col[0];
    if col.iter().all(|v| *v == first) {
        return Err(Error::ConstantColumn(j));
    }
    let (x, y) = split_node(z, j);
    let ql = GaussianRegressionQL::with_gram_threshold(x, y, settings.sigma2, DEFAULT_GRAM_THRESHOLD)?;
    let prior = settings.prior(d - 1, n)?;
    let mut r = rng::stream(seed, j as u64);
    Ok(fit_regression(&prior, &ql, settings.method, &settings.fit, &mut r)?.summary)
}

#[inline]
fn predictor_index(node: usize, k: usize) -> usize {
    if k < node {
        k
    } else {
        k + 1
    }
}

/// Fits every node regression in parallel; node `j` draws from stream `j` of
/// the sampler seed, so the output does not depend on scheduling.
pub fn fit_ggm(z: &DMatrix<f64>, settings: &GgmSettings) -> Result<GgmFit> {
    let d = z.ncols();
    if let Some(diag) = &settings.precision_diag {
        if diag.len() != d {
            return Err(Error::DimensionMismatch {
                context: "precision diagonal",
                expected: d,
                found: diag.len(),
            });
        }
    }
    let seed = settings.fit.sampler.seed;
    let run = || -> Vec<Result<PosteriorSummary>> {
        (0..d)
            .into_par_iter()
            .map(|j| node_regression(z, j, settings, seed))
            .collect()
    };
    let results = match settings.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut node_fits = Vec::with_capacity(d);
    for (node, r) in results.into_iter().enumerate() {
        node_fits.push(r.map_err(|e| Error::NodeFailed {
            node,
            source: Box::new(e),
        })?);
    }

    let mut directed = DMatrix::zeros(d, d);
    let mut coef = DMatrix::zeros(d, d);
    for (j, fit) in node_fits.iter().enumerate() {
        for k in 0..d - 1 {
            let i = predictor_index(j, k);
            directed[(i, j)] = fit.inclusion_probs[k];
            coef[(i, j)] = fit.theta_mean[k];
        }
    }
    let edge_probs = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            0.0
        } else {
            settings.edge_rule.combine(directed[(i, j)], directed[(j, i)])
        }
    });
    let diag = |j: usize| settings.precision_diag.as_ref().map_or(1.0, |v| v[j]);
    // column j: ϑ_jj on the diagonal, -ϑ_jj θ^(j) elsewhere
    let raw = DMatrix::from_fn(d, d, |i, j| if i == j { diag(j) } else { -diag(j) * coef[(i, j)] });
    let precision_estimate = (&raw + raw.transpose()) * 0.5;
    Ok(GgmFit {
        node_fits,
        edge_probs,
        precision_estimate,
    })
}
