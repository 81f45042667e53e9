//! Wall-clock cost table: `p` sampler iterations against the configured
//! number of full and midsize CAVI iterations, over a grid of dimensions.
//!
//! The sampler runs all of its `p` nominal iterations. At most
//! `bench_max_timed_iters` CAVI iterations are run and their totals are the
//! measured per-iteration mean times the nominal count. Data generation,
//! Gram matrices and the lasso start are excluded from the timings.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::fit::{lasso_start, template_for, Method};
use crate::io::csv_error;
use crate::model::GaussianRegressionQL;
use crate::rng;
use crate::sampler::{default_lasso_lambda, effective_cap, lasso_init, run_chain, SamplerConfig};
use crate::simulate::simulate_regression_dims;
use crate::varapprox::{run_cavi, VariationalState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub p: usize,
    pub method: Method,
    pub nominal_iters: usize,
    pub timed_iters: usize,
    pub per_iter_secs: f64,
    pub total_secs: f64,
}

impl CostRow {
    fn new(p: usize, method: Method, nominal_iters: usize, timed_iters: usize, secs: f64) -> Self {
        let per_iter_secs = secs / timed_iters as f64;
        CostRow {
            p,
            method,
            nominal_iters,
            timed_iters,
            per_iter_secs,
            total_secs: per_iter_secs * nominal_iters as f64,
        }
    }
}

/// Rows in grid order, three per dimension: mcmc, full, midsize.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<Vec<CostRow>> {
    let mut rows = Vec::with_capacity(3 * cfg.p_grid.len());
    for (idx, &p) in cfg.p_grid.iter().enumerate() {
        let mut r = rng::stream(cfg.seed, idx as u64);
        let (x, y, _) = simulate_regression_dims(p, cfg.n, cfg.s_star, cfg.psi, &mut r)?;
        let ql = GaussianRegressionQL::with_gram_threshold(x, y, cfg.sigma2, cfg.gram_threshold)?;
        let prior = cfg.prior_for(p, cfg.n)?;
        let lambda = cfg
            .lambda
            .unwrap_or_else(|| default_lasso_lambda(cfg.sigma2, p, cfg.n));

        let sampler = SamplerConfig {
            n_iter: p,
            seed: cfg.seed.wrapping_add(idx as u64),
            burn_in: p - 1,
            thin: 1,
            lazy_half: cfg.lazy_half,
            cap: cfg.cap,
        };
        let init = lasso_start(&ql, lambda, effective_cap(&prior, &sampler))?;
        let trace = run_chain(&prior, &ql, init, &sampler)?;
        rows.push(CostRow::new(p, Method::Mcmc, p, p, trace.timing.total_secs));

        let lasso = lasso_init(&ql, lambda)?;
        let timed = cfg.va_iters.min(cfg.bench_max_timed_iters);
        for method in [Method::Full, Method::Midsize] {
            let tmpl = template_for(method, &ql, &lasso, cfg.template_size)?;
            let state = VariationalState::from_lasso(&lasso, &prior, cfg.n, &tmpl)?;
            let start = Instant::now();
            // a negative tolerance keeps every iteration
            let fit = run_cavi(&prior, &ql, &tmpl, state, timed, -1.0)?;
            let secs = start.elapsed().as_secs_f64();
            rows.push(CostRow::new(p, method, cfg.va_iters, fit.iterations, secs));
        }
    }
    Ok(rows)
}

pub fn write_cost_csv<W: Write>(rows: &[CostRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "method", "nominal_iters", "timed_iters", "per_iter_secs", "total_secs"])
        .map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.p.to_string(),
            r.method.to_string(),
            r.nominal_iters.to_string(),
            r.timed_iters.to_string(),
            format!("{:.6e}", r.per_iter_secs),
            format!("{:.6e}", r.total_secs),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `log(per-iteration cost)` against `log p` for one
/// method. `None` with fewer than two distinct dimensions.
pub fn scaling_exponent(rows: &[CostRow], method: Method) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.method == method && r.per_iter_secs > 0.0)
        .map(|r| ((r.p as f64).ln(), r.per_iter_secs.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 2 || sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

pub fn total_for(rows: &[CostRow], p: usize, method: Method) -> Option<f64> {
    rows.iter().find(|r| r.p == p && r.method == method).map(|r| r.total_secs)
}
