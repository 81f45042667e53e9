//! Synthetic data: AR(ψ) regression designs, Gaussian graphical models and
//! spiked covariance samples.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::rng::SimRng;

/// `n × p` design whose rows are stationary AR(ψ) sequences with unit
/// marginal variance, filled by `x_j = ψ x_{j-1} + √(1-ψ²) ε_j`.
pub fn ar_design(n: usize, p: usize, psi: f64, rng: &mut SimRng) -> DMatrix<f64> {
    let scale = (1.0 - psi * psi).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev: f64 = rng.sample(StandardNormal);
        if p > 0 {
            x[(i, 0)] = prev;
        }
        for j in 1..p {
            let e: f64 = rng.sample(StandardNormal);
            prev = psi * prev + scale * e;
            x[(i, j)] = prev;
        }
    }
    x
}

/// `a = 4 √(s⋆ log p / n)`
pub fn signal_level(s_star: usize, p: usize, n: usize) -> f64 {
    4.0 * (s_star as f64 * (p as f64).ln() / n as f64).sqrt()
}

/// Returns `(X, y, θ⋆)` with `θ⋆_j = ±U(a, a+1)` for `j < s⋆` and
/// `y = Xθ⋆ + ε`, `ε ~ N(0, I)`.
pub fn simulate_regression(cfg: &ExperimentConfig, rng: &mut SimRng) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    simulate_regression_dims(cfg.p, cfg.n, cfg.s_star, cfg.psi, rng)
}

pub fn simulate_regression_dims(
    p: usize,
    n: usize,
    s_star: usize,
    psi: f64,
    rng: &mut SimRng,
) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    if s_star > p {
        return Err(Error::InvalidConfig(format!("s_star ({s_star}) exceeds p ({p})")));
    }
    if !(0.0..1.0).contains(&psi) {
        return Err(Error::InvalidConfig(format!("psi must lie in [0, 1), got {psi}")));
    }
    let x = ar_design(n, p, psi, rng);
    let a = signal_level(s_star, p, n);
    let mut theta = vec![0.0; p];
    for t in theta.iter_mut().take(s_star) {
        let mag = a + rng.random::<f64>();
        *t = if rng.random::<bool>() { mag } else { -mag };
    }
    let mut y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    for (j, &t) in theta.iter().enumerate() {
        if t != 0.0 {
            crate::linalg::axpy(t, x.column(j).as_slice(), &mut y);
        }
    }
    Ok((x, y, theta))
}

/// Precision matrix of a unit-variance AR(ψ) vector: tridiagonal, i.e. a
/// chain graph.
pub fn ar_precision(p: usize, psi: f64) -> DMatrix<f64> {
    let c = 1.0 / (1.0 - psi * psi);
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            if i == 0 || i + 1 == p {
                c
            } else {
                c * (1.0 + psi * psi)
            }
        } else if i.abs_diff(j) == 1 {
            -c * psi
        } else {
            0.0
        }
    })
}

/// `n` rows drawn from `N(0, Θ^{-1})`.
pub fn sample_from_precision(precision: &DMatrix<f64>, n: usize, rng: &mut SimRng) -> Result<DMatrix<f64>> {
    let d = precision.nrows();
    let f = SpdFactor::new(precision).ok_or_else(|| Error::NotPositiveDefinite("precision matrix".into()))?;
    let mut z = DMatrix::zeros(n, d);
    for i in 0..n {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let row = f.solve_upper_t(&g);
        for j in 0..d {
            z[(i, j)] = row[j];
        }
    }
    Ok(z)
}

/// `θ⋆ = (0.5, 0.5, 0, 0.5, 0.5, 0, …, 0)`
pub fn spiked_direction(p: usize) -> Result<Vec<f64>> {
    if p < 5 {
        return Err(Error::InvalidConfig(format!("spiked direction needs p >= 5, got {p}")));
    }
    let mut t = vec![0.0; p];
    for j in [0, 1, 3, 4] {
        t[j] = 0.5;
    }
    Ok(t)
}

/// Rows `z + √ϑ g θ⋆` with `z ~ N(0, I_p)` and scalar `g ~ N(0, 1)`, i.e.
/// covariance `ϑ θ⋆θ⋆' + I`.
pub fn simulate_spiked(cfg: &ExperimentConfig, rng: &mut SimRng) -> Result<(DMatrix<f64>, Vec<f64>)> {
    simulate_spiked_dims(cfg.p, cfg.n, cfg.vartheta, rng)
}

pub fn simulate_spiked_dims(p: usize, n: usize, vartheta: f64, rng: &mut SimRng) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !(vartheta >= 0.0) {
        return Err(Error::InvalidConfig(format!("vartheta must be >= 0, got {vartheta}")));
    }
    let theta = spiked_direction(p)?;
    let s = vartheta.sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
        let g: f64 = rng.sample(StandardNormal);
        for (j, &t) in theta.iter().enumerate() {
            if t != 0.0 {
                x[(i, j)] += s * g * t;
            }
        }
    }
    Ok((x, theta))
}
