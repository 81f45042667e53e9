use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use spikeslab::diagnostics::{enumerate_exact, gaussian_kl};
use spikeslab::io::{read_matrix, rle_decode, rle_encode, write_matrix};
use spikeslab::model::{log_posterior, log_prior, loglik_coordinate_delta, sparsified_loglik};
use spikeslab::sampler::{flip_ratio, run_chain, SamplerConfig};
use spikeslab::spca::projection_error;
use spikeslab::varapprox::{zeta_gap, SparsityTemplate};
use spikeslab::{rng, BinaryModel, GaussianRegressionQL, LogDensity, ModelState, PriorSpec};

fn random_ql(n: usize, p: usize, seed: u64, sigma2: f64, threshold: usize) -> GaussianRegressionQL {
    let mut r = rng::from_seed(seed);
    let x = DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal));
    let mut y: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += 1.2 * x[(i, 0)];
    }
    GaussianRegressionQL::with_gram_threshold(x, y, sigma2, threshold).unwrap()
}

fn random_theta(p: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::from_seed(seed);
    (0..p).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

fn finite(d: LogDensity) -> f64 {
    match d {
        LogDensity::Finite(v) => v,
        LogDensity::Impossible => panic!("unexpected impossible state"),
    }
}

fn spd(s: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::from_seed(seed);
    let a = DMatrix::from_fn(s, s, |_, _| r.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(s, s) * 0.5
}

/// Log density of the whole integrand written out in one pass, term by term.
fn monolithic_log_integrand(prior: &PriorSpec, ql: &GaussianRegressionQL, delta: &BinaryModel, theta: &[f64]) -> f64 {
    let p = prior.p() as f64;
    let q = 1.0 / (1.0 + p.powf(prior.u() + 1.0));
    let (n, pp) = ql.x().shape();
    let mut resid = ql.y().to_vec();
    for i in 0..n {
        for j in 0..pp {
            if delta.get(j) {
                resid[i] -= ql.x()[(i, j)] * theta[j];
            }
        }
    }
    let mut v = -resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * ql.sigma2());
    for j in 0..pp {
        let (w, rho) = if delta.get(j) { (q, prior.rho1()) } else { (1.0 - q, prior.rho0()) };
        v += w.ln() + 0.5 * (rho / (2.0 * std::f64::consts::PI)).ln() - 0.5 * rho * theta[j] * theta[j];
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn active_count_tracks_bits(p in 1usize..40, ops in proptest::collection::vec((0usize..40, any::<bool>()), 0..80)) {
        let mut m = BinaryModel::zeros(p);
        for (j, v) in ops {
            m.set(j % p, v);
            prop_assert_eq!(m.count(), m.bits().iter().filter(|b| **b).count());
            prop_assert!(m.count() <= p);
        }
    }

    #[test]
    fn decomposed_density_matches_monolithic(seed in 0u64..10_000, mask in 0u64..(1 << 12), gram in any::<bool>()) {
        let p = 12;
        let ql = random_ql(15, p, seed, 0.8, if gram { 8192 } else { 0 });
        let prior = PriorSpec::new(50.0, 0.3, 1.5, p).unwrap();
        let delta = BinaryModel::from_mask(p, mask);
        let theta = random_theta(p, seed + 1);
        let got = finite(log_posterior(&prior, &ql, &delta, &theta).unwrap());
        let want = monolithic_log_integrand(&prior, &ql, &delta, &theta);
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {}", got, want);
    }

    #[test]
    fn coordinate_delta_is_a_loglik_difference(seed in 0u64..10_000, p in 1usize..=20, mask in any::<u64>(), gram in any::<bool>()) {
        let ql = random_ql(12, p, seed, 1.3, if gram { 8192 } else { 0 });
        let delta = BinaryModel::from_mask(p, mask);
        let theta = random_theta(p, seed + 7);
        for j in 0..p {
            let mut on = delta.clone();
            on.set(j, true);
            let mut off = delta.clone();
            off.set(j, false);
            let want = sparsified_loglik(&ql, &on, &theta).unwrap() - sparsified_loglik(&ql, &off, &theta).unwrap();
            let got = loglik_coordinate_delta(&ql, &delta, &theta, j).unwrap();
            let scale = sparsified_loglik(&ql, &off, &theta).unwrap().abs().max(1.0);
            prop_assert!((got - want).abs() <= 1e-10 * scale, "j={}: {} vs {}", j, got, want);
        }
    }

    #[test]
    fn loglik_ignores_inactive_coordinates(seed in 0u64..10_000, mask in 0u64..(1 << 10)) {
        let p = 10;
        let ql = random_ql(8, p, seed, 1.0, 8192);
        let delta = BinaryModel::from_mask(p, mask);
        let a = random_theta(p, seed + 2);
        let mut b = random_theta(p, seed + 3);
        for j in delta.active_indices() {
            b[j] = a[j];
        }
        prop_assert_eq!(sparsified_loglik(&ql, &delta, &a).unwrap(), sparsified_loglik(&ql, &delta, &b).unwrap());
    }

    #[test]
    fn flip_moves_satisfy_detailed_balance(seed in 0u64..10_000, mask in 0u64..(1 << 10), j in 0usize..10, lazy in any::<bool>()) {
        let p = 10;
        let ql = random_ql(20, p, seed, 1.0, 8192);
        let prior = PriorSpec::new(80.0, 0.2, 2.0, p).unwrap();
        let theta: Vec<f64> = random_theta(p, seed + 4).iter().map(|t| 0.3 * t).collect();
        let mut d0 = BinaryModel::from_mask(p, mask);
        d0.set(j, false);
        let mut d1 = d0.clone();
        d1.set(j, true);
        let s0 = ModelState::new(d0.clone(), theta.clone()).unwrap();
        let s1 = ModelState::new(d1.clone(), theta.clone()).unwrap();
        let log_a = finite(flip_ratio(&prior, &ql, &s0, j).unwrap());
        prop_assert_eq!(log_a, finite(flip_ratio(&prior, &ql, &s1, j).unwrap()));
        let log_h = if lazy { 0.5f64.ln() } else { 0.0 };
        // proposal probability 1/2 on both sides
        let up = finite(log_posterior(&prior, &ql, &d0, &theta).unwrap()) + log_a.min(0.0) + log_h;
        let down = finite(log_posterior(&prior, &ql, &d1, &theta).unwrap()) + (-log_a).min(0.0) + log_h;
        prop_assert!((up - down).abs() <= 1e-9 * up.abs().max(1.0), "{} vs {}", up, down);
    }

    #[test]
    fn cap_makes_large_models_impossible(p in 2usize..20, cap in 1usize..20, seed in 0u64..1000) {
        let cap = cap.min(p);
        let prior = PriorSpec::new(10.0, 1.0, 2.0, p).unwrap().with_cap(cap).unwrap();
        let theta = random_theta(p, seed);
        let over = BinaryModel::from_indices(p, &(0..p).collect::<Vec<_>>()).unwrap();
        let lp = log_prior(&over, &theta, &prior).unwrap();
        prop_assert_eq!(lp.is_impossible(), p > cap);
    }

    #[test]
    fn chain_length_matches_config(n_iter in 2usize..60, burn_frac in 0.0f64..0.99, thin in 1usize..5, seed in 0u64..100) {
        let burn_in = ((n_iter as f64) * burn_frac) as usize;
        let ql = random_ql(10, 4, seed, 1.0, 8192);
        let prior = PriorSpec::regression_default(4, 10).unwrap();
        let config = SamplerConfig { n_iter, seed, burn_in, thin, lazy_half: true, cap: None };
        let t = run_chain(&prior, &ql, ModelState::zeros(4), &config).unwrap();
        prop_assert_eq!(t.delta_samples.len(), (n_iter - burn_in) / thin);
        prop_assert_eq!(t.theta_samples.len(), t.delta_samples.len());
    }

    #[test]
    fn zeta_is_nonnegative_and_vanishes_on_covering_templates(seed in 0u64..10_000, star in 1u64..(1 << 6), tmpl_mask in 0u64..(1 << 6), gamma in 0.1f64..10.0) {
        let p = 6;
        let delta_star = BinaryModel::from_mask(p, star);
        let s = delta_star.count();
        let info = spd(s, seed);
        let tmpl = SparsityTemplate::new(BinaryModel::from_mask(p, tmpl_mask));
        let z = zeta_gap(&info, gamma, &tmpl, &delta_star).unwrap();
        prop_assert!(z >= 0.0);
        let covering = SparsityTemplate::new(BinaryModel::from_mask(p, tmpl_mask | star));
        prop_assert_eq!(zeta_gap(&info, gamma, &covering, &delta_star).unwrap(), 0.0);
        if s >= 2 && tmpl_mask & star != star {
            // a dense random info matrix loses off-diagonal mass under the mask
            let uncovered = delta_star.active_indices().into_iter().filter(|&j| tmpl_mask >> j & 1 == 0).count();
            if uncovered > 0 {
                prop_assert!(z > 0.0);
            }
        }
    }

    #[test]
    fn gaussian_kl_is_nonnegative(seed in 0u64..10_000, d in 1usize..6, eps in 0.0f64..1e-7) {
        let s1 = spd(d, seed);
        let s2 = spd(d, seed + 1);
        let mut r = rng::from_seed(seed + 2);
        let m1: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        let m2: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        prop_assert!(gaussian_kl(&m1, &s1, &m2, &s2).unwrap() >= 0.0);
        prop_assert!(gaussian_kl(&m1, &s1, &m1, &s1).unwrap().abs() <= 1e-12);
        let m1b: Vec<f64> = m1.iter().map(|v| v + eps).collect();
        let near = gaussian_kl(&m1, &s1, &m1b, &s1).unwrap();
        prop_assert!((0.0..=1e-12).contains(&near));
    }

    #[test]
    fn enumeration_is_permutation_equivariant(seed in 0u64..10_000, perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
        let p = 6;
        let ql = random_ql(15, p, seed, 1.0, 8192);
        let prior = PriorSpec::new(60.0, 0.4, 1.0, p).unwrap();
        let base = enumerate_exact(&prior, &ql).unwrap().inclusion_probs();
        let xp = DMatrix::from_fn(15, p, |i, k| ql.x()[(i, perm[k])]);
        let qp = GaussianRegressionQL::new(xp, ql.y().to_vec(), 1.0).unwrap();
        let permuted = enumerate_exact(&prior, &qp).unwrap().inclusion_probs();
        for k in 0..p {
            prop_assert!((permuted[k] - base[perm[k]]).abs() < 1e-12);
        }
    }

    /// The spike integrates out exactly, so the model posterior coincides
    /// with the point-mass spike-and-slab posterior computed in response
    /// space, `y | δ ~ N(0, σ²I + X_δX_δ'/ρ₁)`, for every spike precision.
    #[test]
    fn enumeration_equals_point_mass_marginal(seed in 0u64..10_000, rho0 in 1.0f64..1e6, rho1 in 0.05f64..5.0) {
        let (n, p) = (9, 5);
        let ql = random_ql(n, p, seed, 0.7, 8192);
        let prior = PriorSpec::new(rho0, rho1, 1.0, p).unwrap();
        let exact = enumerate_exact(&prior, &ql).unwrap();
        let mut logm = Vec::new();
        for k in 0..(1u64 << p) {
            let d = BinaryModel::from_mask(p, k);
            let idx = d.active_indices();
            let xd = DMatrix::from_fn(n, idx.len(), |i, a| ql.x()[(i, idx[a])]);
            let cov = DMatrix::identity(n, n) * ql.sigma2() + &xd * xd.transpose() / rho1;
            let chol = cov.clone().cholesky().unwrap();
            let y = nalgebra::DVector::from_column_slice(ql.y());
            let quad = y.dot(&chol.solve(&y));
            let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let s = idx.len() as f64;
            logm.push(s * prior.log_q() + (p as f64 - s) * prior.log_one_minus_q() - 0.5 * logdet - 0.5 * quad);
        }
        let mx = logm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logm.iter().map(|l| (l - mx).exp()).sum();
        for (k, l) in logm.iter().enumerate() {
            let want = (l - mx).exp() / z;
            let got = exact.prob(&BinaryModel::from_mask(p, k as u64));
            prop_assert!((got - want).abs() < 1e-10, "{} vs {}", got, want);
        }
    }

    #[test]
    fn projection_error_is_sign_invariant_and_bounded(seed in 0u64..10_000, d in 2usize..10) {
        let a = random_theta(d, seed);
        let b = random_theta(d, seed + 1);
        let e = projection_error(&a, &b).unwrap();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        prop_assert_eq!(e, projection_error(&neg, &b).unwrap());
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn rle_round_trips(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
        let m = BinaryModel::from_bits(bits);
        prop_assert_eq!(rle_decode(&rle_encode(&m)).unwrap(), m);
    }

    #[test]
    fn matrix_csv_round_trips_bitwise(rows in 0usize..6, cols in 1usize..6, vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 36)) {
        let x = DMatrix::from_fn(rows, cols, |i, j| vals[i * 6 + j]);
        let mut buf = Vec::new();
        write_matrix(&x, &mut buf).unwrap();
        let back = read_matrix(buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        for (a, b) in back.iter().zip(x.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
