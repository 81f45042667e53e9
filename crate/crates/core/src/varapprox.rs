//! Coordinate-ascent variational inference for the Gaussian regression
//! quasi-posterior.
//!
//! The family is `∏_j Ber(α_j) ⊗ N(μ, C)`, where `C` is restricted to a
//! sparsity pattern built from a template `t ∈ {0,1}^p`: `C_ij` may be
//! nonzero only if `i = j` or `t_i = t_j = 1`. An empty template gives the
//! mean-field ("skinny") approximation and a full template the full-covariance
//! one.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, SpdFactor};
use crate::model::{BinaryModel, GaussianRegressionQL, ModelState, PriorSpec};

pub const ALPHA_MIN: f64 = 1e-12;
pub const ALPHA_MAX: f64 = 1.0 - 1e-12;
pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityTemplate {
    template: BinaryModel,
    block: Vec<usize>,
}

impl SparsityTemplate {
    pub fn new(template: BinaryModel) -> Self {
        let block = template.active_indices();
        SparsityTemplate { template, block }
    }

    pub fn skinny(p: usize) -> Self {
        SparsityTemplate::new(BinaryModel::zeros(p))
    }

    pub fn full(p: usize) -> Self {
        SparsityTemplate::new(BinaryModel::ones(p))
    }

    /// `base` plus the coordinates with the largest `|⟨X_j, y⟩|`, up to `size`
    /// coordinates in total.
    pub fn midsize(ql: &GaussianRegressionQL, base: &BinaryModel, size: usize) -> Result<Self> {
        let p = ql.p();
        if base.len() != p {
            return Err(Error::DimensionMismatch {
                context: "template base",
                expected: p,
                found: base.len(),
            });
        }
        let mut t = base.clone();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| ql.xty()[b].abs().total_cmp(&ql.xty()[a].abs()));
        for j in order {
            if t.count() >= size.min(p) {
                break;
            }
            t.set(j, true);
        }
        Ok(SparsityTemplate::new(t))
    }

    pub fn p(&self) -> usize {
        self.template.len()
    }

    pub fn template(&self) -> &BinaryModel {
        &self.template
    }

    /// Indices with `t_j = 1`, ascending.
    pub fn block(&self) -> &[usize] {
        &self.block
    }

    pub fn pattern(&self, i: usize, j: usize) -> bool {
        i == j || (self.template.get(i) && self.template.get(j))
    }

    pub fn pattern_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |i, j| if self.pattern(i, j) { 1.0 } else { 0.0 })
    }
}

/// Variational parameters. `C` is stored as a dense block over the template
/// support plus a diagonal for every coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    block: Vec<usize>,
    c_block: DMatrix<f64>,
    c_diag: Vec<f64>,
}

impl VariationalState {
    /// `C = c_scale · I`.
    pub fn new(alpha: Vec<f64>, mu: Vec<f64>, c_scale: f64, tmpl: &SparsityTemplate) -> Result<Self> {
        let p = tmpl.p();
        for (context, v) in [("alpha", &alpha), ("mu", &mu)] {
            if v.len() != p {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: p,
                    found: v.len(),
                });
            }
        }
        if alpha.iter().chain(&mu).any(|v| !v.is_finite()) || !(c_scale > 0.0) {
            return Err(Error::NonFinite("variational parameters"));
        }
        let alpha = alpha.into_iter().map(|a| a.clamp(ALPHA_MIN, ALPHA_MAX)).collect();
        let s = tmpl.block().len();
        Ok(VariationalState {
            alpha,
            mu,
            block: tmpl.block().to_vec(),
            c_block: DMatrix::identity(s, s) * c_scale,
            c_diag: vec![c_scale; p],
        })
    }

    /// `α = 0.9` on the support of `init`, `q` elsewhere; `μ = θ`;
    /// `C = (0.001/n) I`.
    pub fn from_lasso(init: &ModelState, prior: &PriorSpec, n: usize, tmpl: &SparsityTemplate) -> Result<Self> {
        let q = prior.q();
        let alpha = init
            .delta
            .bits()
            .iter()
            .map(|&b| if b { 0.9 } else { q })
            .collect();
        VariationalState::new(alpha, init.theta.clone(), 0.001 / n as f64, tmpl)
    }

    pub fn p(&self) -> usize {
        self.alpha.len()
    }

    pub fn c_diag(&self) -> &[f64] {
        &self.c_diag
    }

    /// Covariance over the template support, in ascending index order.
    pub fn c_block(&self) -> &DMatrix<f64> {
        &self.c_block
    }

    pub fn c_entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.c_diag[i];
        }
        match (self.block.binary_search(&i), self.block.binary_search(&j)) {
            (Ok(a), Ok(b)) => self.c_block[(a, b)],
            _ => 0.0,
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |i, j| self.c_entry(i, j))
    }

    fn check(&self, tmpl: &SparsityTemplate, ql: &GaussianRegressionQL) -> Result<()> {
        if self.p() != ql.p() || tmpl.p() != ql.p() {
            return Err(Error::DimensionMismatch {
                context: "variational state",
                expected: ql.p(),
                found: self.p(),
            });
        }
        if self.block != tmpl.block() {
            return Err(Error::InvalidConfig("variational state built for a different template".into()));
        }
        Ok(())
    }

    /// `y - Σ_i α_i μ_i X_i`
    fn residual(&self, ql: &GaussianRegressionQL) -> Vec<f64> {
        let mut r = ql.y().to_vec();
        for j in 0..self.p() {
            let w = self.alpha[j] * self.mu[j];
            if w != 0.0 {
                axpy(-w, ql.column(j), &mut r);
            }
        }
        r
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log R_j`; `t_j = ⟨X_j, y - Σ_{i≠j} α_i μ_i X_i⟩`, `s_j = 2 Σ_{i≠j} α_i C_ij G_ij`.
fn log_r(prior: &PriorSpec, ql: &GaussianRegressionQL, st: &VariationalState, j: usize, t_j: f64, s_j: f64) -> f64 {
    let m2 = st.mu[j] * st.mu[j] + st.c_diag[j];
    -prior.log_q_ratio() + 0.5 * (prior.rho0() / prior.rho1()).ln()
        + 0.5 * (prior.rho1() - prior.rho0()) * m2
        + (m2 * ql.col_sq_norms()[j] - 2.0 * st.mu[j] * t_j + s_j) / (2.0 * ql.sigma2())
}

/// Sequential sweep of `α_j = 1/(1 + R_j)` over `j = 1..p`.
pub fn cavi_update_alpha(
    state: &mut VariationalState,
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    tmpl: &SparsityTemplate,
) -> Result<()> {
    state.check(tmpl, ql)?;
    let mut r = state.residual(ql);
    let block = tmpl.block();
    let pos: Vec<Option<usize>> = {
        let mut pos = vec![None; state.p()];
        for (a, &j) in block.iter().enumerate() {
            pos[j] = Some(a);
        }
        pos
    };
    for j in 0..state.p() {
        let col = ql.column(j);
        let t_j = dot(col, &r) + state.alpha[j] * state.mu[j] * ql.col_sq_norms()[j];
        let s_j = match pos[j] {
            Some(a) => {
                2.0 * block
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(b, &i)| state.alpha[i] * state.c_block[(a, b)] * ql.gram_entry(i, j))
                    .sum::<f64>()
            }
            None => 0.0,
        };
        let lr = log_r(prior, ql, state, j, t_j, s_j);
        let new = sigmoid(-lr).clamp(ALPHA_MIN, ALPHA_MAX);
        let old = state.alpha[j];
        if new != old {
            axpy((old - new) * state.mu[j], col, &mut r);
            state.alpha[j] = new;
        }
    }
    Ok(())
}

/// Updates `(μ, C)` given `α`: diagonal updates off the template, then a joint
/// update of the template block.
pub fn cavi_update_gaussian(
    state: &mut VariationalState,
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    tmpl: &SparsityTemplate,
) -> Result<()> {
    state.check(tmpl, ql)?;
    let sigma2 = ql.sigma2();
    let (rho0, rho1) = (prior.rho0(), prior.rho1());
    let mut r = state.residual(ql);
    for j in 0..state.p() {
        if tmpl.template().get(j) {
            continue;
        }
        let a = state.alpha[j];
        let g = ql.col_sq_norms()[j];
        let c = 1.0 / ((rho1 + g / sigma2) * a + rho0 * (1.0 - a));
        let col = ql.column(j);
        let t = dot(col, &r) + a * state.mu[j] * g;
        let mu = c * a * t / sigma2;
        axpy(-a * (mu - state.mu[j]), col, &mut r);
        state.c_diag[j] = c;
        state.mu[j] = mu;
    }

    let block = tmpl.block();
    let s = block.len();
    if s == 0 {
        return Ok(());
    }
    let g = ql.gram_block(block);
    let am: Vec<f64> = block.iter().map(|&i| state.alpha[i] * state.mu[i]).collect();
    // X_B' ỹ with ỹ = r + X_B (α ⊙ μ)_B
    let mut rhs: Vec<f64> = block.iter().map(|&i| dot(ql.column(i), &r)).collect();
    for a in 0..s {
        rhs[a] += (0..s).map(|b| g[(a, b)] * am[b]).sum::<f64>();
    }
    let mut prec = DMatrix::zeros(s, s);
    for a in 0..s {
        let aa = state.alpha[block[a]];
        for b in 0..s {
            let ab = state.alpha[block[b]];
            prec[(a, b)] = if a == b { aa } else { aa * ab } * g[(a, b)] / sigma2;
        }
        prec[(a, a)] += aa * rho1 + rho0 * (1.0 - aa);
        rhs[a] *= aa / sigma2;
    }
    let factor = SpdFactor::new(&prec).ok_or(Error::BlockInversionFailed { size: s })?;
    let mu_b = factor.solve(&rhs);
    state.c_block = factor.inverse();
    for (a, &i) in block.iter().enumerate() {
        state.mu[i] = mu_b[a];
        state.c_diag[i] = state.c_block[(a, a)];
    }
    Ok(())
}

fn entropy_bernoulli(a: f64) -> f64 {
    -(a * a.ln() + (1.0 - a) * (1.0 - a).ln())
}

/// Evidence lower bound of the state, up to an additive constant independent
/// of the variational parameters.
pub fn elbo(
    state: &VariationalState,
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    tmpl: &SparsityTemplate,
) -> Result<f64> {
    state.check(tmpl, ql)?;
    let p = state.p();
    let (alpha, mu) = (&state.alpha, &state.mu);
    let gd = ql.col_sq_norms();

    let fit: Vec<f64> = {
        let mut w = vec![0.0; ql.n()];
        for j in 0..p {
            axpy(alpha[j] * mu[j], ql.column(j), &mut w);
        }
        w
    };
    let mut sq = ql.yty() + dot(&fit, &fit);
    for j in 0..p {
        let am = alpha[j] * mu[j];
        sq += -2.0 * am * ql.xty()[j] + alpha[j] * (mu[j] * mu[j] + state.c_diag[j]) * gd[j] - am * am * gd[j];
    }
    let block = tmpl.block();
    for (a, &i) in block.iter().enumerate() {
        for (b, &j) in block.iter().enumerate() {
            if a != b {
                sq += alpha[i] * alpha[j] * state.c_block[(a, b)] * ql.gram_entry(i, j);
            }
        }
    }
    let loglik = -sq / (2.0 * ql.sigma2());

    let (lq, l1q) = (prior.log_q(), prior.log_one_minus_q());
    let (rho0, rho1) = (prior.rho0(), prior.rho1());
    let mut log_prior = 0.0;
    let mut ent = 0.0;
    for j in 0..p {
        let m2 = mu[j] * mu[j] + state.c_diag[j];
        let a = alpha[j];
        log_prior += a * (lq + 0.5 * (rho1 / (2.0 * PI)).ln() - 0.5 * rho1 * m2)
            + (1.0 - a) * (l1q + 0.5 * (rho0 / (2.0 * PI)).ln() - 0.5 * rho0 * m2);
        ent += entropy_bernoulli(a);
        if !tmpl.template().get(j) {
            ent += 0.5 * state.c_diag[j].ln();
        }
    }
    if !block.is_empty() {
        let f = SpdFactor::new(&state.c_block).ok_or(Error::BlockInversionFailed { size: block.len() })?;
        ent += 0.5 * f.log_det();
    }
    ent += 0.5 * p as f64 * (2.0 * PI * std::f64::consts::E).ln();
    Ok(loglik + log_prior + ent)
}

#[derive(Clone, Debug)]
pub struct CaviFit {
    pub state: VariationalState,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates the `α` sweep and the Gaussian update until the largest change
/// in `(α, μ)` drops below `tol` or `max_iter` iterations have run.
pub fn run_cavi(
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    tmpl: &SparsityTemplate,
    init: VariationalState,
    max_iter: usize,
    tol: f64,
) -> Result<CaviFit> {
    run_cavi_inner(prior, ql, tmpl, init, max_iter, tol, |_| Ok(()))
}

/// As [`run_cavi`], also returning the ELBO after every iteration.
pub fn run_cavi_monitored(
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    tmpl: &SparsityTemplate,
    init: VariationalState,
    max_iter: usize,
    tol: f64,
) -> Result<(CaviFit, Vec<f64>)> {
    let mut history = Vec::new();
    let fit = run_cavi_inner(prior, ql, tmpl, init, max_iter, tol, |st| {
        history.push(elbo(st, prior, ql, tmpl)?);
        Ok(())
    })?;
    Ok((fit, history))
}

fn run_cavi_inner(
    prior: &PriorSpec,
    ql: &GaussianRegressionQL,
    tmpl: &SparsityTemplate,
    init: VariationalState,
    max_iter: usize,
    tol: f64,
    mut observe: impl FnMut(&VariationalState) -> Result<()>,
) -> Result<CaviFit> {
    if max_iter == 0 {
        return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
    }
    let mut state = init;
    state.check(tmpl, ql)?;
    for it in 1..=max_iter {
        let (alpha_old, mu_old) = (state.alpha.clone(), state.mu.clone());
        cavi_update_alpha(&mut state, prior, ql, tmpl)?;
        cavi_update_gaussian(&mut state, prior, ql, tmpl)?;
        if state.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("variational mean"));
        }
        observe(&state)?;
        let change = alpha_old
            .iter()
            .zip(&state.alpha)
            .chain(mu_old.iter().zip(&state.mu))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < tol {
            return Ok(CaviFit {
                state,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(CaviFit {
        state,
        iterations: max_iter,
        converged: false,
    })
}

/// Gap term `ζ = log det I - log det(S∘I) + tr(I^{-1}(S∘I)) - s⋆` between the
/// limiting information matrix on the support of `δ⋆` and its pattern-masked
/// version. Off-support coordinates contribute nothing since the pattern keeps
/// the diagonal.
pub fn zeta_gap(info: &DMatrix<f64>, gamma: f64, tmpl: &SparsityTemplate, delta_star: &BinaryModel) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidConfig(format!("gamma must be > 0, got {gamma}")));
    }
    let support = delta_star.active_indices();
    let s = support.len();
    if info.nrows() != s || info.ncols() != s {
        return Err(Error::DimensionMismatch {
            context: "information matrix",
            expected: s,
            found: info.nrows(),
        });
    }
    if delta_star.len() != tmpl.p() {
        return Err(Error::DimensionMismatch {
            context: "template",
            expected: delta_star.len(),
            found: tmpl.p(),
        });
    }
    let masked = DMatrix::from_fn(s, s, |a, b| {
        if tmpl.pattern(support[a], support[b]) {
            info[(a, b)]
        } else {
            0.0
        }
    });
    let full = SpdFactor::new(info).ok_or_else(|| Error::NotPositiveDefinite("information matrix".into()))?;
    let part = SpdFactor::new(&masked).ok_or_else(|| Error::NotPositiveDefinite("masked information matrix".into()))?;
    if masked == *info {
        return Ok(0.0);
    }
    let inv = full.inverse();
    let trace: f64 = (0..s).map(|a| (0..s).map(|b| inv[(a, b)] * masked[(b, a)]).sum::<f64>()).sum();
    let zeta = full.log_det() - part.log_det() + trace - s as f64;
    Ok(zeta.max(0.0))
}
