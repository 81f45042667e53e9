//! Spike-and-slab prior, binary model vectors and the quasi-likelihood
//! interface, plus the unnormalized log quasi-posterior
//!
//! ```text
//! log Π(δ, θ | z) = ℓ(θ_δ; z) + log ω(δ)
//!                 + (‖δ‖₀/2) log(ρ₁/2π) + ((p-‖δ‖₀)/2) log(ρ₀/2π)
//!                 - (ρ₁/2)‖θ_δ‖² - (ρ₀/2)‖θ - θ_δ‖² + const
//! ```
//!
//! where `θ_δ` is the componentwise product of `θ` and `δ`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot};

/// A point of `{0,1}^p` with a cached count of ones.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryModel {
    bits: Vec<bool>,
    active_count: usize,
}

impl BinaryModel {
    pub fn zeros(p: usize) -> Self {
        BinaryModel {
            bits: vec![false; p],
            active_count: 0,
        }
    }

    pub fn ones(p: usize) -> Self {
        BinaryModel {
            bits: vec![true; p],
            active_count: p,
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let active_count = bits.iter().filter(|b| **b).count();
        BinaryModel { bits, active_count }
    }

    pub fn from_indices(p: usize, active: &[usize]) -> Result<Self> {
        let mut m = BinaryModel::zeros(p);
        for &j in active {
            if j >= p {
                return Err(Error::IndexOutOfRange { index: j, dim: p });
            }
            m.set(j, true);
        }
        Ok(m)
    }

    /// Bit `j` of `mask` becomes coordinate `j`.
    pub fn from_mask(p: usize, mask: u64) -> Self {
        BinaryModel::from_bits((0..p).map(|j| mask >> j & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        self.bits[j]
    }

    #[inline]
    pub fn set(&mut self, j: usize, value: bool) {
        if self.bits[j] != value {
            self.bits[j] = value;
            if value {
                self.active_count += 1;
            } else {
                self.active_count -= 1;
            }
        }
    }

    /// `‖δ‖₀`
    #[inline]
    pub fn count(&self) -> usize {
        self.active_count
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
            .collect()
    }

    /// True if every active coordinate of `other` is active here.
    pub fn contains(&self, other: &BinaryModel) -> bool {
        self.len() == other.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| *a || !*b)
    }
}

/// Log-density value with a dedicated "zero mass" sentinel.
///
/// `Impossible` marks points outside the prior support (capped prior) and is
/// treated as certain rejection by every acceptance rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LogDensity {
    Finite(f64),
    Impossible,
}

impl LogDensity {
    pub fn value(self) -> f64 {
        match self {
            LogDensity::Finite(v) => v,
            LogDensity::Impossible => f64::NEG_INFINITY,
        }
    }

    pub fn is_impossible(self) -> bool {
        matches!(self, LogDensity::Impossible)
    }

    pub fn map(self, f: impl FnOnce(f64) -> f64) -> LogDensity {
        match self {
            LogDensity::Finite(v) => LogDensity::Finite(f(v)),
            LogDensity::Impossible => LogDensity::Impossible,
        }
    }
}

/// Spike/slab precisions and the sparsity prior on `δ`.
///
/// The inclusion odds are fixed at `q/(1-q) = p^{-(u+1)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    rho0: f64,
    rho1: f64,
    u: f64,
    p: usize,
    cap: Option<usize>,
    q_ratio: f64,
}

impl PriorSpec {
    pub fn new(rho0: f64, rho1: f64, u: f64, p: usize) -> Result<Self> {
        if !(rho1 > 0.0) || !rho1.is_finite() {
            return Err(Error::InvalidConfig(format!("slab precision must be > 0, got {rho1}")));
        }
        if !(rho0 >= rho1) || !rho0.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "spike precision ({rho0}) must be at least the slab precision ({rho1})"
            )));
        }
        if !(u > 0.0) || !u.is_finite() {
            return Err(Error::InvalidConfig(format!("sparsity exponent must be > 0, got {u}")));
        }
        if p == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        let q_ratio = (p as f64).powf(-(u + 1.0));
        Ok(PriorSpec {
            rho0,
            rho1,
            u,
            p,
            cap: None,
            q_ratio,
        })
    }

    /// Default regression prior: `ρ₁ = √(log p / n)`, `ρ₀ = 4n`, `u = 2`.
    pub fn regression_default(p: usize, n: usize) -> Result<Self> {
        let rho1 = ((p.max(2) as f64).ln() / n as f64).sqrt();
        PriorSpec::new(4.0 * n as f64, rho1, 2.0, p)
    }

    /// Restricts the prior to models with at most `cap` active coordinates.
    pub fn with_cap(mut self, cap: usize) -> Result<Self> {
        if cap == 0 || cap > self.p {
            return Err(Error::InvalidConfig(format!(
                "cap must lie in [1, {}], got {cap}",
                self.p
            )));
        }
        self.cap = Some(cap);
        Ok(self)
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }
    pub fn rho1(&self) -> f64 {
        self.rho1
    }
    pub fn u(&self) -> f64 {
        self.u
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn cap(&self) -> Option<usize> {
        self.cap
    }
    /// `q/(1-q)`
    pub fn q_ratio(&self) -> f64 {
        self.q_ratio
    }
    pub fn log_q_ratio(&self) -> f64 {
        -(self.u + 1.0) * (self.p as f64).ln()
    }
    pub fn q(&self) -> f64 {
        self.q_ratio / (1.0 + self.q_ratio)
    }
    pub fn log_q(&self) -> f64 {
        self.log_q_ratio() - self.q_ratio.ln_1p()
    }
    pub fn log_one_minus_q(&self) -> f64 {
        -self.q_ratio.ln_1p()
    }

    pub fn within_cap(&self, count: usize) -> bool {
        self.cap.is_none_or(|c| count <= c)
    }
}

/// Quasi-likelihood `ℓ(θ; z)` evaluated at sparsified arguments `θ_δ`.
pub trait QuasiLikelihood: Sync {
    fn dim(&self) -> usize;

    /// `ℓ(θ_δ; z)`
    fn sparsified_loglik(&self, delta: &BinaryModel, theta: &[f64]) -> Result<f64>;

    /// Gradient of `u ↦ ℓ((u,0)_δ; z)` at `u = [θ]_δ`, in active-index order.
    fn gradient_active(&self, delta: &BinaryModel, theta: &[f64]) -> Result<Vec<f64>>;

    /// `ℓ(θ̄^{(j,1)}) - ℓ(θ̄^{(j,0)})`: the two arguments equal `θ_δ` off `j`
    /// and hold `θ_j` and `0` at `j` respectively.
    fn loglik_coordinate_delta(&self, delta: &BinaryModel, theta: &[f64], j: usize) -> Result<f64> {
        check_dims(self.dim(), delta, theta)?;
        if j >= self.dim() {
            return Err(Error::IndexOutOfRange { index: j, dim: self.dim() });
        }
        let mut d = delta.clone();
        d.set(j, true);
        let on = self.sparsified_loglik(&d, theta)?;
        d.set(j, false);
        let off = self.sparsified_loglik(&d, theta)?;
        Ok(on - off)
    }

    /// Incremental evaluator for a sequential sweep over `j` at fixed `θ`.
    fn scanner<'a>(&'a self, _delta: &BinaryModel, theta: &'a [f64]) -> Box<dyn CoordinateScanner + 'a>
    where
        Self: Sized,
    {
        Box::new(GenericScanner { ql: self, theta })
    }
}

/// Supplies `loglik_coordinate_delta` during a sweep in which `δ` changes one
/// coordinate at a time while `θ` stays fixed.
pub trait CoordinateScanner {
    fn coordinate_delta(&mut self, delta: &BinaryModel, j: usize) -> f64;
    /// Called after coordinate `j` of `δ` has been flipped.
    fn flipped(&mut self, j: usize, now_active: bool);
}

struct GenericScanner<'a, Q: QuasiLikelihood> {
    ql: &'a Q,
    theta: &'a [f64],
}

impl<Q: QuasiLikelihood> CoordinateScanner for GenericScanner<'_, Q> {
    fn coordinate_delta(&mut self, delta: &BinaryModel, j: usize) -> f64 {
        self.ql
            .loglik_coordinate_delta(delta, self.theta, j)
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn flipped(&mut self, _j: usize, _now_active: bool) {}
}

pub(crate) fn check_dims(p: usize, delta: &BinaryModel, theta: &[f64]) -> Result<()> {
    if delta.len() != p {
        return Err(Error::DimensionMismatch {
            context: "model vector",
            expected: p,
            found: delta.len(),
        });
    }
    if theta.len() != p {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected: p,
            found: theta.len(),
        });
    }
    Ok(())
}

/// Designs with at most this many columns get a precomputed Gram matrix.
pub const DEFAULT_GRAM_THRESHOLD: usize = 8192;

/// Gaussian least-squares quasi-likelihood `ℓ(θ) = -‖y - Xθ‖² / (2σ²)`.
#[derive(Clone, Debug)]
pub struct GaussianRegressionQL {
    x: DMatrix<f64>,
    y: Vec<f64>,
    sigma2: f64,
    gram: Option<DMatrix<f64>>,
    xty: Vec<f64>,
    col_sq_norms: Vec<f64>,
    yty: f64,
}

impl GaussianRegressionQL {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, sigma2: f64) -> Result<Self> {
        Self::with_gram_threshold(x, y, sigma2, DEFAULT_GRAM_THRESHOLD)
    }

    pub fn with_gram_threshold(
        x: DMatrix<f64>,
        y: Vec<f64>,
        sigma2: f64,
        gram_threshold: usize,
    ) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "response length",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidConfig(format!("noise scale must be > 0, got {sigma2}")));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression data"));
        }
        let p = x.ncols();
        let xty: Vec<f64> = (0..p).map(|j| dot(x.column(j).as_slice(), &y)).collect();
        let gram = (p <= gram_threshold).then(|| linalg::gram(&x));
        let col_sq_norms: Vec<f64> = match &gram {
            Some(g) => (0..p).map(|j| g[(j, j)]).collect(),
            None => (0..p)
                .map(|j| {
                    let c = x.column(j);
                    dot(c.as_slice(), c.as_slice())
                })
                .collect(),
        };
        let yty = dot(&y, &y);
        Ok(GaussianRegressionQL {
            x,
            y,
            sigma2,
            gram,
            xty,
            col_sq_norms,
            yty,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn gram(&self) -> Option<&DMatrix<f64>> {
        self.gram.as_ref()
    }
    pub fn xty(&self) -> &[f64] {
        &self.xty
    }
    pub fn col_sq_norms(&self) -> &[f64] {
        &self.col_sq_norms
    }
    pub fn yty(&self) -> f64 {
        self.yty
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.x.nrows();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }

    /// `⟨X_i, X_j⟩`, from the Gram matrix when available.
    #[inline]
    pub fn gram_entry(&self, i: usize, j: usize) -> f64 {
        match &self.gram {
            Some(g) => g[(i, j)],
            None => dot(self.column(i), self.column(j)),
        }
    }

    /// `X_A' X_A` for an index set `A`.
    pub fn gram_block(&self, idx: &[usize]) -> DMatrix<f64> {
        let s = idx.len();
        match &self.gram {
            Some(g) => DMatrix::from_fn(s, s, |a, b| g[(idx[a], idx[b])]),
            None => {
                let mut m = DMatrix::zeros(s, s);
                for a in 0..s {
                    for b in a..s {
                        let v = dot(self.column(idx[a]), self.column(idx[b]));
                        m[(a, b)] = v;
                        m[(b, a)] = v;
                    }
                }
                m
            }
        }
    }

    /// `X θ_δ`
    pub fn fitted(&self, delta: &BinaryModel, theta: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.n()];
        for j in delta.active_indices() {
            linalg::axpy(theta[j], self.column(j), &mut w);
        }
        w
    }

    /// `Σ_{i∈δ, i≠j} θ_i ⟨X_j, X_i⟩`
    fn cross_term(&self, delta: &BinaryModel, theta: &[f64], j: usize) -> f64 {
        match &self.gram {
            Some(g) => {
                let col = g.column(j);
                delta
                    .active_indices()
                    .into_iter()
                    .filter(|&i| i != j)
                    .map(|i| theta[i] * col[i])
                    .sum()
            }
            None => {
                let mut w = vec![0.0; self.n()];
                for i in delta.active_indices() {
                    if i != j {
                        linalg::axpy(theta[i], self.column(i), &mut w);
                    }
                }
                dot(self.column(j), &w)
            }
        }
    }

    #[inline]
    fn coordinate_formula(&self, theta_j: f64, j: usize, cross: f64) -> f64 {
        -theta_j * theta_j * self.col_sq_norms[j] / (2.0 * self.sigma2)
            + theta_j / self.sigma2 * (self.xty[j] - cross)
    }
}

impl QuasiLikelihood for GaussianRegressionQL {
    fn dim(&self) -> usize {
        self.p()
    }

    fn sparsified_loglik(&self, delta: &BinaryModel, theta: &[f64]) -> Result<f64> {
        check_dims(self.p(), delta, theta)?;
        let mut r = self.y.clone();
        for j in delta.active_indices() {
            linalg::axpy(-theta[j], self.column(j), &mut r);
        }
        Ok(-dot(&r, &r) / (2.0 * self.sigma2))
    }

    fn gradient_active(&self, delta: &BinaryModel, theta: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.p(), delta, theta)?;
        let mut r = self.y.clone();
        let active = delta.active_indices();
        for &j in &active {
            linalg::axpy(-theta[j], self.column(j), &mut r);
        }
        Ok(active
            .iter()
            .map(|&j| dot(self.column(j), &r) / self.sigma2)
            .collect())
    }

    fn loglik_coordinate_delta(&self, delta: &BinaryModel, theta: &[f64], j: usize) -> Result<f64> {
        check_dims(self.p(), delta, theta)?;
        if j >= self.p() {
            return Err(Error::IndexOutOfRange { index: j, dim: self.p() });
        }
        if theta[j] == 0.0 {
            return Ok(0.0);
        }
        let cross = self.cross_term(delta, theta, j);
        Ok(self.coordinate_formula(theta[j], j, cross))
    }

    fn scanner<'a>(&'a self, delta: &BinaryModel, theta: &'a [f64]) -> Box<dyn CoordinateScanner + 'a> {
        Box::new(GaussianScanner::new(self, delta, theta))
    }
}

/// Keeps `G_{:,δ} θ_δ` (with a Gram matrix) or `X_δ θ_δ` (without) up to date
/// across a sweep, so each coordinate costs O(1) or O(n) respectively.
pub(crate) struct GaussianScanner<'a> {
    ql: &'a GaussianRegressionQL,
    theta: &'a [f64],
    acc: Vec<f64>,
}

impl<'a> GaussianScanner<'a> {
    pub(crate) fn new(ql: &'a GaussianRegressionQL, delta: &BinaryModel, theta: &'a [f64]) -> Self {
        let acc = match &ql.gram {
            Some(g) => {
                let mut h = vec![0.0; ql.p()];
                for i in delta.active_indices() {
                    linalg::axpy(theta[i], g.column(i).as_slice(), &mut h);
                }
                h
            }
            None => ql.fitted(delta, theta),
        };
        GaussianScanner { ql, theta, acc }
    }
}

impl CoordinateScanner for GaussianScanner<'_> {
    fn coordinate_delta(&mut self, delta: &BinaryModel, j: usize) -> f64 {
        let tj = self.theta[j];
        if tj == 0.0 {
            return 0.0;
        }
        let own = if delta.get(j) { tj * self.ql.col_sq_norms[j] } else { 0.0 };
        let full = match &self.ql.gram {
            Some(_) => self.acc[j],
            None => dot(self.ql.column(j), &self.acc),
        };
        self.ql.coordinate_formula(tj, j, full - own)
    }

    fn flipped(&mut self, j: usize, now_active: bool) {
        let sign = if now_active { 1.0 } else { -1.0 };
        let coef = sign * self.theta[j];
        match &self.ql.gram {
            Some(g) => linalg::axpy(coef, g.column(j).as_slice(), &mut self.acc),
            None => linalg::axpy(coef, self.ql.column(j), &mut self.acc),
        }
    }
}

/// The pair `(δ, θ)` carried by the samplers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub delta: BinaryModel,
    pub theta: Vec<f64>,
}

impl ModelState {
    pub fn new(delta: BinaryModel, theta: Vec<f64>) -> Result<Self> {
        check_dims(delta.len(), &delta, &theta)?;
        Ok(ModelState { delta, theta })
    }

    pub fn zeros(p: usize) -> Self {
        ModelState {
            delta: BinaryModel::zeros(p),
            theta: vec![0.0; p],
        }
    }

    /// `θ_δ`
    pub fn sparsified(&self) -> Vec<f64> {
        self.theta
            .iter()
            .zip(self.delta.bits())
            .map(|(t, &b)| if b { *t } else { 0.0 })
            .collect()
    }
}

/// `log ω(δ)` plus the Gaussian spike/slab log-densities of `θ`.
pub fn log_prior(delta: &BinaryModel, theta: &[f64], prior: &PriorSpec) -> Result<LogDensity> {
    check_dims(prior.p(), delta, theta)?;
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("theta"));
    }
    let s = delta.count();
    if !prior.within_cap(s) {
        return Ok(LogDensity::Impossible);
    }
    let p = prior.p();
    let (s_f, off_f) = (s as f64, (p - s) as f64);
    let mut slab_sq = 0.0;
    let mut spike_sq = 0.0;
    for (t, &b) in theta.iter().zip(delta.bits()) {
        if b {
            slab_sq += t * t;
        } else {
            spike_sq += t * t;
        }
    }
    let v = s_f * prior.log_q()
        + off_f * prior.log_one_minus_q()
        + 0.5 * s_f * (prior.rho1() / (2.0 * PI)).ln()
        + 0.5 * off_f * (prior.rho0() / (2.0 * PI)).ln()
        - 0.5 * prior.rho1() * slab_sq
        - 0.5 * prior.rho0() * spike_sq;
    Ok(LogDensity::Finite(v))
}

pub fn sparsified_loglik<Q: QuasiLikelihood + ?Sized>(
    ql: &Q,
    delta: &BinaryModel,
    theta: &[f64],
) -> Result<f64> {
    ql.sparsified_loglik(delta, theta)
}

pub fn loglik_coordinate_delta<Q: QuasiLikelihood + ?Sized>(
    ql: &Q,
    delta: &BinaryModel,
    theta: &[f64],
    j: usize,
) -> Result<f64> {
    ql.loglik_coordinate_delta(delta, theta, j)
}

/// Unnormalized log quasi-posterior `log_prior + ℓ(θ_δ)`.
pub fn log_posterior<Q: QuasiLikelihood + ?Sized>(
    prior: &PriorSpec,
    ql: &Q,
    delta: &BinaryModel,
    theta: &[f64],
) -> Result<LogDensity> {
    let lp = log_prior(delta, theta, prior)?;
    if lp.is_impossible() {
        return Ok(lp);
    }
    let ll = ql.sparsified_loglik(delta, theta)?;
    Ok(lp.map(|v| v + ll))
}
