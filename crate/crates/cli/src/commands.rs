use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use spikeslab::bench::{run_benchmark, scaling_exponent, write_cost_csv, CostRow};
use spikeslab::config::{ExperimentConfig, Mode};
use spikeslab::diagnostics::{
    bvm_limit_from_fit, enumerate_exact, error_rates, kl_to_bvm, selection_report, KlEstimate, SelectionReport,
    DEFAULT_KL_DRAWS, MAX_ENUMERATION_DIM,
};
use spikeslab::fit::{fit_regression as fit_reg, Method, PosteriorSummary};
use spikeslab::ggm::{fit_ggm as run_ggm, GgmSettings};
use spikeslab::io;
use spikeslab::linalg::SpdFactor;
use spikeslab::sampler::Trace;
use spikeslab::simulate::{ar_precision, sample_from_precision, simulate_regression, simulate_spiked};
use spikeslab::spca::fit_spca as run_spca;
use spikeslab::{rng, BinaryModel, Error, GaussianRegressionQL, Result};

use crate::run::{fit_seed, load_config, rep_name, require_mode, Loaded, RunDir};
use crate::{Common, RegressionInput};

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    io::read_matrix_file(path)
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    io::read_vector(BufReader::new(File::open(path)?))
}

fn write_vector(v: &[f64], name: &str, path: &Path) -> Result<()> {
    io::write_vector(v, name, std::io::BufWriter::new(File::create(path)?))
}

fn write_trace(trace: &Trace, path: &Path) -> Result<()> {
    io::write_trace(trace, std::io::BufWriter::new(File::create(path)?))
}

fn support_of(theta: &[f64]) -> BinaryModel {
    BinaryModel::from_bits(theta.iter().map(|v| *v != 0.0).collect())
}

/// Runs `f` over the replications on the configured pool; results come back
/// in replication order so the caller writes them from a single thread.
fn fan_out<T: Send>(cfg: &ExperimentConfig, reps: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let run = || (0..reps).into_par_iter().map(&f).collect::<Vec<_>>();
    let results = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    results.into_iter().collect()
}

pub fn simulate(common: &Common) -> Result<PathBuf> {
    let loaded = load_config(&common.config, common.seed)?;
    let cfg = &loaded.config;
    require_mode(cfg, &[Mode::Regression, Mode::Ggm, Mode::Spca], "simulate")?;
    let mut dir = RunDir::create(common.out.as_deref(), "simulate", cfg.seed)?;
    let reps = cfg.replications;
    for rep in 0..reps {
        let mut r = rng::stream(cfg.seed, rep as u64);
        match cfg.mode {
            Mode::Regression => {
                let (x, y, theta) = simulate_regression(cfg, &mut r)?;
                io::write_matrix_file(&x, &dir.path(&rep_name(reps, rep, "x.csv"))?)?;
                write_vector(&y, "y", &dir.path(&rep_name(reps, rep, "y.csv"))?)?;
                write_vector(&theta, "theta_star", &dir.path(&rep_name(reps, rep, "theta_star.csv"))?)?;
            }
            Mode::Ggm => {
                let precision = ar_precision(cfg.p, cfg.psi);
                let z = sample_from_precision(&precision, cfg.n, &mut r)?;
                io::write_matrix_file(&z, &dir.path(&rep_name(reps, rep, "z.csv"))?)?;
                io::write_matrix_file(&precision, &dir.path(&rep_name(reps, rep, "precision.csv"))?)?;
            }
            Mode::Spca => {
                let (x, theta) = simulate_spiked(cfg, &mut r)?;
                io::write_matrix_file(&x, &dir.path(&rep_name(reps, rep, "x.csv"))?)?;
                write_vector(&theta, "theta_star", &dir.path(&rep_name(reps, rep, "theta_star.csv"))?)?;
            }
            Mode::Benchmark => unreachable!(),
        }
    }
    dir.finish(&loaded, &[Some(&common.config)])
}

struct RegressionData {
    x: DMatrix<f64>,
    y: Vec<f64>,
    theta_star: Option<Vec<f64>>,
}

fn regression_data(cfg: &ExperimentConfig, input: &RegressionInput, rep: usize) -> Result<RegressionData> {
    let theta_star = input.theta_star.as_deref().map(read_vector).transpose()?;
    match (&input.x, &input.y) {
        (Some(xp), Some(yp)) => {
            let x = read_matrix(xp)?;
            let y = read_vector(yp)?;
            if let Some(t) = &theta_star {
                if t.len() != x.ncols() {
                    return Err(Error::DimensionMismatch {
                        context: "theta_star",
                        expected: x.ncols(),
                        found: t.len(),
                    });
                }
            }
            Ok(RegressionData { x, y, theta_star })
        }
        _ => {
            let (x, y, t) = simulate_regression(cfg, &mut rng::stream(cfg.seed, rep as u64))?;
            Ok(RegressionData {
                x,
                y,
                theta_star: theta_star.or(Some(t)),
            })
        }
    }
}

/// Number of replications: one for supplied data, the configured count for
/// simulated data.
fn replications(cfg: &ExperimentConfig, supplied: bool) -> usize {
    if supplied {
        1
    } else {
        cfg.replications
    }
}

#[derive(Serialize)]
struct SelectionSummary {
    fdr: f64,
    fnr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<SelectionReport>,
}

struct RegressionOutput {
    summary: PosteriorSummary,
    trace: Option<Trace>,
    selection: Option<SelectionSummary>,
    data: Option<RegressionData>,
}

fn selection_summary(summary: &PosteriorSummary, trace: Option<&Trace>, truth: &BinaryModel) -> Result<SelectionSummary> {
    let report = trace.map(|t| selection_report(t, truth)).transpose()?;
    let selected = BinaryModel::from_bits(summary.inclusion_probs.iter().map(|&a| a >= 0.5).collect());
    let (fdr, fnr) = error_rates(&selected, truth);
    Ok(SelectionSummary { fdr, fnr, report })
}

pub fn fit_regression(common: &Common, input: &RegressionInput) -> Result<PathBuf> {
    let loaded = load_config(&common.config, common.seed)?;
    let cfg = &loaded.config;
    require_mode(cfg, &[Mode::Regression], "fit-regression")?;
    let supplied = input.x.is_some();
    let reps = replications(cfg, supplied);
    let settings = cfg.fit_settings();
    let outputs = fan_out(cfg, reps, |rep| {
        let data = regression_data(cfg, input, rep)?;
        let (n, p) = data.x.shape();
        let ql = GaussianRegressionQL::with_gram_threshold(data.x.clone(), data.y.clone(), cfg.sigma2, cfg.gram_threshold)?;
        let prior = cfg.prior_for(p, n)?;
        let mut r = rng::from_seed(fit_seed(cfg.seed, rep));
        let fit = fit_reg(&prior, &ql, cfg.method, &settings, &mut r)?;
        let selection = data
            .theta_star
            .as_deref()
            .map(|t| selection_summary(&fit.summary, fit.trace.as_ref(), &support_of(t)))
            .transpose()?;
        Ok(RegressionOutput {
            summary: fit.summary,
            trace: fit.trace,
            selection,
            data: (!supplied).then_some(data),
        })
    })?;

    let mut dir = RunDir::create(common.out.as_deref(), "fit-regression", cfg.seed)?;
    for (rep, out) in outputs.iter().enumerate() {
        io::write_json(&out.summary, &dir.path(&rep_name(reps, rep, "summary.json"))?)?;
        if let Some(t) = &out.trace {
            write_trace(t, &dir.path(&rep_name(reps, rep, "trace.csv"))?)?;
        }
        if let Some(s) = &out.selection {
            io::write_json(s, &dir.path(&rep_name(reps, rep, "selection.json"))?)?;
        }
        if let Some(d) = &out.data {
            io::write_matrix_file(&d.x, &dir.path(&rep_name(reps, rep, "x.csv"))?)?;
            write_vector(&d.y, "y", &dir.path(&rep_name(reps, rep, "y.csv"))?)?;
            if let Some(t) = &d.theta_star {
                write_vector(t, "theta_star", &dir.path(&rep_name(reps, rep, "theta_star.csv"))?)?;
            }
        }
    }
    dir.finish(
        &loaded,
        &[Some(&common.config), input.x.as_deref(), input.y.as_deref(), input.theta_star.as_deref()],
    )
}

fn ggm_settings(cfg: &ExperimentConfig, rep: usize) -> GgmSettings {
    let mut fit = cfg.fit_settings();
    fit.sampler.seed = fit_seed(cfg.seed, rep);
    let mut s = GgmSettings::new(fit, cfg.method);
    s.u = cfg.u;
    s.rho1 = cfg.rho1;
    s.rho0 = cfg.rho0_inv.map(|v| 1.0 / v);
    s.sigma2 = cfg.sigma2;
    s.edge_rule = cfg.edge_rule;
    s.threads = cfg.threads;
    s
}

#[derive(Serialize)]
struct GgmReport {
    threshold: f64,
    edges: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fdr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fnr: Option<f64>,
}

fn upper_edges(m: &DMatrix<f64>, keep: impl Fn(f64) -> bool) -> BinaryModel {
    let d = m.nrows();
    let mut bits = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            bits.push(keep(m[(i, j)]));
        }
    }
    BinaryModel::from_bits(bits)
}

pub fn fit_ggm(common: &Common, z_path: Option<&Path>) -> Result<PathBuf> {
    let loaded = load_config(&common.config, common.seed)?;
    let cfg = &loaded.config;
    require_mode(cfg, &[Mode::Ggm], "fit-ggm")?;
    let reps = replications(cfg, z_path.is_some());
    let mut dir = RunDir::create(common.out.as_deref(), "fit-ggm", cfg.seed)?;
    // node regressions already run in parallel, so replications run in turn
    for rep in 0..reps {
        let (z, truth) = match z_path {
            Some(p) => (read_matrix(p)?, None),
            None => {
                let precision = ar_precision(cfg.p, cfg.psi);
                let z = sample_from_precision(&precision, cfg.n, &mut rng::stream(cfg.seed, rep as u64))?;
                (z, Some(precision))
            }
        };
        let fit = run_ggm(&z, &ggm_settings(cfg, rep))?;
        let threshold = 0.5;
        let (fdr, fnr) = match &truth {
            Some(t) => {
                let selected = upper_edges(&fit.edge_probs, |v| v >= threshold);
                let (a, b) = error_rates(&selected, &upper_edges(t, |v| v != 0.0));
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        let report = GgmReport {
            threshold,
            edges: fit.edges(threshold),
            fdr,
            fnr,
        };
        io::write_matrix_file(&fit.edge_probs, &dir.path(&rep_name(reps, rep, "edge_probs.csv"))?)?;
        io::write_matrix_file(&fit.precision_estimate, &dir.path(&rep_name(reps, rep, "precision_estimate.csv"))?)?;
        io::write_json(&fit.node_fits, &dir.path(&rep_name(reps, rep, "node_summaries.json"))?)?;
        io::write_json(&report, &dir.path(&rep_name(reps, rep, "graph.json"))?)?;
        if let Some(t) = &truth {
            io::write_matrix_file(&z, &dir.path(&rep_name(reps, rep, "z.csv"))?)?;
            io::write_matrix_file(t, &dir.path(&rep_name(reps, rep, "precision.csv"))?)?;
        }
    }
    dir.finish(&loaded, &[Some(&common.config), z_path])
}

#[derive(Serialize)]
struct SpcaSummary {
    v1: Vec<f64>,
    sign: f64,
    tied: bool,
    inclusion_probs: Vec<f64>,
    posterior_mean_abs: Vec<f64>,
    acceptance_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_projection_error: Option<f64>,
}

pub fn fit_spca(common: &Common, x_path: Option<&Path>, theta_path: Option<&Path>) -> Result<PathBuf> {
    let loaded = load_config(&common.config, common.seed)?;
    let cfg = &loaded.config;
    require_mode(cfg, &[Mode::Spca], "fit-spca")?;
    let supplied = x_path.is_some();
    let reps = replications(cfg, supplied);
    let outputs = fan_out(cfg, reps, |rep| {
        let given = theta_path.map(read_vector).transpose()?;
        let (x, truth) = match x_path {
            Some(p) => (read_matrix(p)?, given),
            None => {
                let (x, t) = simulate_spiked(cfg, &mut rng::stream(cfg.seed, rep as u64))?;
                (x, given.or(Some(t)))
            }
        };
        let (n, p) = x.shape();
        let prior = cfg.prior_for(p, n)?;
        let mut sampler = cfg.sampler_config();
        sampler.seed = fit_seed(cfg.seed, rep);
        let fit = run_spca(&x, &prior, cfg.sigma2, &sampler, truth.as_deref())?;
        let summary = SpcaSummary {
            v1: fit.v1.clone(),
            sign: fit.sign,
            tied: fit.tied,
            inclusion_probs: fit.trace.inclusion_frequencies(),
            posterior_mean_abs: fit.posterior_mean_abs(),
            acceptance_rate: fit.trace.acceptance_counts.overall_rate(),
            mean_projection_error: fit.mean_projection_error(),
        };
        Ok((summary, fit.trace, (!supplied).then_some((x, truth))))
    })?;
    let mut dir = RunDir::create(common.out.as_deref(), "fit-spca", cfg.seed)?;
    for (rep, (summary, trace, data)) in outputs.iter().enumerate() {
        io::write_json(summary, &dir.path(&rep_name(reps, rep, "summary.json"))?)?;
        write_trace(trace, &dir.path(&rep_name(reps, rep, "trace.csv"))?)?;
        if let Some((x, truth)) = data {
            io::write_matrix_file(x, &dir.path(&rep_name(reps, rep, "x.csv"))?)?;
            if let Some(t) = truth {
                write_vector(t, "theta_star", &dir.path(&rep_name(reps, rep, "theta_star.csv"))?)?;
            }
        }
    }
    dir.finish(&loaded, &[Some(&common.config), x_path, theta_path])
}

#[derive(Serialize)]
struct MomentCheck {
    coordinate: usize,
    theta_hat: f64,
    posterior_mean: f64,
    mean_std_error: f64,
    limit_variance: f64,
    posterior_variance: f64,
}

#[derive(Serialize)]
struct Diagnostics {
    selection: SelectionReport,
    kl_to_limit: Option<KlEstimate>,
    kl_error: Option<String>,
    moments: Vec<MomentCheck>,
    acceptance_rate: f64,
    mean_iteration_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_inclusion_probs: Option<Vec<f64>>,
}

fn diagnose_one(cfg: &ExperimentConfig, data: &RegressionData, rep: usize) -> Result<Diagnostics> {
    let theta_star = data
        .theta_star
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("diagnose needs --theta-star with supplied data".into()))?;
    let truth = support_of(theta_star);
    let (n, p) = data.x.shape();
    let ql = GaussianRegressionQL::with_gram_threshold(data.x.clone(), data.y.clone(), cfg.sigma2, cfg.gram_threshold)?;
    let prior = cfg.prior_for(p, n)?;
    let mut settings = cfg.fit_settings();
    settings.sampler.seed = fit_seed(cfg.seed, rep);
    let mut r = rng::from_seed(fit_seed(cfg.seed, rep));
    let fit = fit_reg(&prior, &ql, Method::Mcmc, &settings, &mut r)?;
    let trace = fit.trace.expect("mcmc fit keeps its trace");
    let selection = selection_report(&trace, &truth)?;

    let limit = bvm_limit_from_fit(&ql, &truth, &prior)?;
    let (kl_to_limit, kl_error) = match kl_to_bvm(&trace, &limit, &prior, &ql, DEFAULT_KL_DRAWS, fit_seed(cfg.seed, rep) ^ 1) {
        Ok(k) => (Some(k), None),
        Err(e) if !matches!(e, Error::NoTargetVisits) => return Err(e),
        Err(e) => (None, Some(e.to_string())),
    };

    let support = truth.active_indices();
    let limit_cov = match SpdFactor::new(&limit.info) {
        Some(f) if !support.is_empty() => f.inverse(),
        _ => DMatrix::zeros(support.len(), support.len()),
    };
    let moments = support
        .iter()
        .enumerate()
        .map(|(a, &j)| {
            let xs: Vec<f64> = trace.theta_samples.iter().map(|t| t[j]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len().max(2) - 1) as f64;
            MomentCheck {
                coordinate: j,
                theta_hat: limit.theta_hat[a],
                posterior_mean: m,
                mean_std_error: spikeslab::diagnostics::batch_means_se(&xs),
                limit_variance: limit_cov[(a, a)],
                posterior_variance: v,
            }
        })
        .collect();
    let exact_inclusion_probs = if p <= MAX_ENUMERATION_DIM {
        Some(enumerate_exact(&prior, &ql)?.inclusion_probs())
    } else {
        None
    };
    Ok(Diagnostics {
        selection,
        kl_to_limit,
        kl_error,
        moments,
        acceptance_rate: trace.acceptance_counts.overall_rate(),
        mean_iteration_secs: trace.timing.mean_secs(),
        exact_inclusion_probs,
    })
}

pub fn diagnose(common: &Common, input: &RegressionInput) -> Result<PathBuf> {
    let loaded = load_config(&common.config, common.seed)?;
    let cfg = &loaded.config;
    require_mode(cfg, &[Mode::Regression], "diagnose")?;
    let reps = replications(cfg, input.x.is_some());
    let outputs = fan_out(cfg, reps, |rep| {
        let data = regression_data(cfg, input, rep)?;
        diagnose_one(cfg, &data, rep)
    })?;
    let mut dir = RunDir::create(common.out.as_deref(), "diagnose", cfg.seed)?;
    for (rep, d) in outputs.iter().enumerate() {
        io::write_json(d, &dir.path(&rep_name(reps, rep, "diagnostics.json"))?)?;
    }
    dir.finish(
        &loaded,
        &[Some(&common.config), input.x.as_deref(), input.y.as_deref(), input.theta_star.as_deref()],
    )
}

#[derive(Serialize)]
struct BenchSummary<'a> {
    rows: &'a [CostRow],
    mcmc_exponent: Option<f64>,
    full_exponent: Option<f64>,
    midsize_exponent: Option<f64>,
}

pub fn benchmark(common: &Common) -> Result<PathBuf> {
    let loaded: Loaded = load_config(&common.config, common.seed)?;
    let cfg = &loaded.config;
    require_mode(cfg, &[Mode::Benchmark], "benchmark")?;
    let rows = run_benchmark(cfg)?;
    let mut dir = RunDir::create(common.out.as_deref(), "benchmark", cfg.seed)?;
    write_cost_csv(&rows, std::io::BufWriter::new(File::create(dir.path("costs.csv")?)?))?;
    let summary = BenchSummary {
        rows: &rows,
        mcmc_exponent: scaling_exponent(&rows, Method::Mcmc),
        full_exponent: scaling_exponent(&rows, Method::Full),
        midsize_exponent: scaling_exponent(&rows, Method::Midsize),
    };
    io::write_json(&summary, &dir.path("summary.json")?)?;
    dir.finish(&loaded, &[Some(&common.config)])
}
