use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gfksd::density::{
    fd_score, fit_kde, fit_laplace, CustomDensity, Density, DensityRef, GaussianDensity, LaplaceOptions,
    MixtureDensity, StudentTDensity,
};
use gfksd::discrepancy::{gfksd_squared, gfksd_via_reparam, ParticleMeasure};
use gfksd::kernel::{stein_matrix, ImqKernel};
use gfksd::numeric::gauss_hermite_normal;
use gfksd::sampling::{
    draw_samples, energy_distance, optimal_stein_weights_log, self_normalized_weights, stein_system, QpOptions,
};

fn pts_1d(v: &[f64]) -> Vec<Vec<f64>> {
    v.iter().map(|x| vec![*x]).collect()
}

fn normalize(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reparam_agrees_with_direct_sum(
        xs in prop::collection::vec(-3.0f64..3.0, 1..25),
        raw in prop::collection::vec(0.01f64..1.0, 25),
        mp in -1.0f64..1.0, vp in 0.3f64..3.0,
        mq in -1.0f64..1.0, vq in 0.3f64..3.0,
    ) {
        let p = GaussianDensity::univariate(mp, vp).unwrap();
        let q = GaussianDensity::univariate(mq, vq).unwrap();
        let pi = ParticleMeasure::new(pts_1d(&xs), normalize(&raw[..xs.len()])).unwrap();
        let k = ImqKernel::default();
        let a = gfksd_squared(&p, &q, &k, &pi).unwrap().value_squared;
        let b = gfksd_via_reparam(&p, &q, &k, &pi).unwrap().value_squared;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE));
    }

    #[test]
    fn normalizing_constant_of_p_does_not_matter(
        xs in prop::collection::vec(-3.0f64..3.0, 1..20),
        c in -5.0f64..5.0,
    ) {
        let p = GaussianDensity::univariate(0.3, 1.7).unwrap();
        let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let shifted = {
            let p = p.clone();
            CustomDensity::new(1, move |x| p.log_density(x) + c)
        };
        let pi = ParticleMeasure::uniform(pts_1d(&xs)).unwrap();
        let k = ImqKernel::default();
        let a = gfksd_squared(&p, &q, &k, &pi).unwrap().value_squared;
        let b = gfksd_squared(&shifted, &q, &k, &pi).unwrap().value_squared * (2.0 * c).exp();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn permuting_particles_leaves_discrepancy_unchanged(
        xs in prop::collection::vec(-3.0f64..3.0, 2..20),
        raw in prop::collection::vec(0.01f64..1.0, 20),
        seed in 0u64..1000,
    ) {
        let n = xs.len();
        let w = normalize(&raw[..n]);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let p = GaussianDensity::univariate(0.5, 2.0).unwrap();
        let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let k = ImqKernel::default();
        let a = gfksd_squared(&p, &q, &k, &ParticleMeasure::new(pts_1d(&xs), w.clone()).unwrap()).unwrap();
        let perm_pts: Vec<Vec<f64>> = order.iter().map(|&i| vec![xs[i]]).collect();
        let perm_w: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        let b = gfksd_squared(&p, &q, &k, &ParticleMeasure::new(perm_pts, perm_w).unwrap()).unwrap();
        prop_assert!((a.value_squared - b.value_squared).abs() <= 1e-12 * a.value_squared.max(1.0));
    }

    #[test]
    fn energy_distance_is_nonnegative_and_symmetric(
        xa in prop::collection::vec(-3.0f64..3.0, 1..15),
        xb in prop::collection::vec(-3.0f64..3.0, 1..15),
        raw in prop::collection::vec(0.01f64..1.0, 15),
    ) {
        let a = ParticleMeasure::new(pts_1d(&xa), normalize(&raw[..xa.len()])).unwrap();
        let b = ParticleMeasure::uniform(pts_1d(&xb)).unwrap();
        let ab = energy_distance(&a, &b).unwrap();
        let ba = energy_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn laplace_reproduces_any_gaussian(
        m0 in -3.0f64..3.0, m1 in -3.0f64..3.0,
        a in 0.3f64..2.0, b in 0.3f64..2.0, rho in -0.8f64..0.8,
    ) {
        let cov = DMatrix::from_row_slice(2, 2, &[a * a, rho * a * b, rho * a * b, b * b]);
        let g = GaussianDensity::new(vec![m0, m1], cov.clone()).unwrap();
        let fit = fit_laplace(&g, &[0.0, 0.0], &LaplaceOptions::default()).unwrap();
        let mean_err = ((fit.mode[0] - m0).powi(2) + (fit.mode[1] - m1).powi(2)).sqrt();
        let cov_err = (fit.gaussian.covariance() - &cov).norm() / cov.norm();
        prop_assert!(mean_err <= 1e-6, "mean error {mean_err}");
        prop_assert!(cov_err <= 1e-4, "covariance error {cov_err}");
    }

    #[test]
    fn optimal_weights_beat_uniform_and_self_normalized(seed in 0u64..500, n in 2usize..40) {
        let p = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let q: DensityRef = Arc::new(GaussianDensity::univariate(0.2, 1.69).unwrap());
        let k = ImqKernel::default();
        let pts = draw_samples(q.as_ref(), n, seed).unwrap();
        let (km, lr) = stein_system(&p, &q, &k, &pts, None).unwrap();
        let sol = optimal_stein_weights_log(&km, &lr, &QpOptions::default()).unwrap();
        let at = |w: Vec<f64>| gfksd_squared(&p, q.as_ref(), &k, &ParticleMeasure::new(pts.clone(), w).unwrap()).unwrap().value_squared;
        let best = at(sol.weights.clone());
        let uniform = at(vec![1.0 / n as f64; n]);
        let snis = at(self_normalized_weights(&p, q.as_ref(), &pts).unwrap().weights().to_vec());
        prop_assert!(best <= uniform * (1.0 + 1e-9));
        prop_assert!(best <= snis * (1.0 + 1e-9));
        let sum: f64 = sol.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-8 && sol.weights.iter().all(|w| *w >= 0.0));
    }
}

#[test]
fn analytic_scores_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let comp = |m: f64, v: f64| -> DensityRef { Arc::new(GaussianDensity::univariate(m, v).unwrap()) };
    let models: Vec<DensityRef> = vec![
        Arc::new(GaussianDensity::new(vec![0.5, -1.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5])).unwrap()),
        Arc::new(MixtureDensity::new(vec![(0.3, comp(-1.0, 0.2)), (0.7, comp(1.5, 1.0))]).unwrap()),
        Arc::new(fit_kde(&pts_1d(&[-1.0, 0.2, 0.4, 2.0, 3.1])).unwrap()),
        Arc::new(StudentTDensity::new(10.0, 0.0, 0.5).unwrap()),
    ];
    for m in &models {
        assert!(m.has_score());
        for _ in 0..100 {
            let x: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-2.5..2.5)).collect();
            let s = m.score(&x).unwrap();
            let fd = fd_score(m.as_ref(), &x, 1e-5);
            for (a, b) in s.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{:?} at {x:?}: {a} vs {b}", m.kind());
            }
        }
    }
}

#[test]
fn stein_matrix_is_symmetric_psd_and_matches_pairwise_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let k = ImqKernel::new(1.3, 0.4).unwrap();
    let q = GaussianDensity::isotropic(vec![0.0; 3], 1.5).unwrap();
    let pts: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let scores: Vec<Vec<f64>> = pts.iter().map(|x| q.score(x).unwrap()).collect();
    let m = stein_matrix(&k, &pts, &scores).unwrap();
    for i in 0..20 {
        for j in 0..20 {
            let direct = k.stein_kernel(&pts[i], &pts[j], &scores[i], &scores[j]).unwrap().value;
            assert!((m.get(i, j) - direct).abs() <= 1e-14 * direct.abs().max(1.0));
            assert!((m.get(i, j) - m.get(j, i)).abs() <= 1e-12);
        }
    }
    let norm = m.as_matrix().norm();
    let min_eig = m.as_matrix().clone().symmetric_eigen().eigenvalues.min();
    assert!(min_eig >= -1e-8 * norm, "smallest eigenvalue {min_eig}");
}

#[test]
fn stein_kernel_is_symmetric_in_its_arguments() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let k = ImqKernel::default();
    for _ in 0..100 {
        let d = rng.random_range(1..5);
        let mut v = || -> Vec<f64> { (0..d).map(|_| rng.random_range(-2.0..2.0)).collect() };
        let (x, y, sx, sy) = (v(), v(), v(), v());
        let a = k.stein_kernel(&x, &y, &sx, &sy).unwrap().value;
        let b = k.stein_kernel(&y, &x, &sy, &sx).unwrap().value;
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }
}

#[test]
fn vanishing_integral_converges_with_quadrature_order() {
    let k = ImqKernel::default();
    for y0 in [-1.0, 0.0, 2.0] {
        let integral = |n: usize| -> f64 {
            let (x, w) = gauss_hermite_normal(n);
            x.iter().zip(&w).map(|(x, w)| w * k.stein_kernel(&[*x], &[y0], &[-x], &[-y0]).unwrap().value).sum()
        };
        let (e64, e128, e200) = (integral(64).abs(), integral(128).abs(), integral(200).abs());
        assert!(e128 < e64 && e200 < e128, "{e64} {e128} {e200}");
        assert!(e200 < 1e-9, "y0={y0}: {e200}");
    }
}

#[test]
fn discrepancy_is_bitwise_independent_of_thread_count() {
    let p = GaussianDensity::univariate(0.4, 2.0).unwrap();
    let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
    let pts = draw_samples(&q, 300, 5).unwrap();
    let pi = ParticleMeasure::uniform(pts).unwrap();
    let k = ImqKernel::default();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| gfksd_squared(&p, &q, &k, &pi).unwrap().value_squared)
    };
    let one = run(1);
    assert_eq!(one.to_bits(), run(3).to_bits());
    assert_eq!(one.to_bits(), run(8).to_bits());
}

#[test]
fn random_reparam_example_in_one_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = GaussianDensity::univariate(0.5, 2.0).unwrap();
    let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
    let raw: Vec<f64> = (0..20).map(|_| rng.random_range(0.1..1.0)).collect();
    let pi = ParticleMeasure::new(pts_1d(&xs), normalize(&raw)).unwrap();
    let k = ImqKernel::default();
    let a = gfksd_squared(&p, &q, &k, &pi).unwrap().value_squared;
    let b = gfksd_via_reparam(&p, &q, &k, &pi).unwrap().value_squared;
    assert!((a - b).abs() <= 1e-10 * a);
}
