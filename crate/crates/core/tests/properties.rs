//! Property and Monte-Carlo tests against independent references.

use proptest::prelude::*;

use fa_lab::data::project_y;
use fa_lab::diagnostics::{activation_moments, cos_alignment, gaussian_expectation};
use fa_lab::dynamics::{dyn_init, dyn_step};
use fa_lab::linalg::{self, matmul, norm2, spectral_norm, sym_eig, Matrix};
use fa_lab::rng::derive_stream;
use fa_lab::trainers::fa_reg_step;
use fa_lab::verify::isometry_extremes;
use fa_lab::{Activation, Dataset, TwoLayerNet};

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::from_vec(rows, cols, derive_stream(seed, "prop").gaussian(rows * cols, 1.0)).unwrap()
}

fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            c[(i, j)] = (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum();
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_naive(m in 1usize..12, k in 1usize..12, n in 1usize..12, seed in any::<u64>()) {
        let a = matrix(m, k, seed);
        let b = matrix(k, n, seed ^ 1);
        let c = matmul(&a, &b).unwrap();
        prop_assert!(c.max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
        prop_assert!(linalg::matmul_tn(&a.transpose(), &b).unwrap().max_abs_diff(&c) < 1e-12);
        prop_assert!(linalg::matmul_nt(&a, &b.transpose()).unwrap().max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn sym_eig_is_orthonormal_and_reconstructs(n in 1usize..16, seed in any::<u64>()) {
        let a = matrix(n, n, seed);
        let s = linalg::matmul_tn(&a, &a).unwrap();
        let eig = sym_eig(&s).unwrap();
        let trace: f64 = eig.values.iter().sum();
        prop_assert!((trace - s.trace()).abs() < 1e-10 * s.trace().max(1.0));
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        let vtv = linalg::matmul_tn(&eig.vectors, &eig.vectors).unwrap();
        prop_assert!(vtv.max_abs_diff(&Matrix::identity(n)) < 1e-10);
        prop_assert!(eig.reconstruct_with(|l| l).max_abs_diff(&s) < 1e-10 * s.max_abs().max(1.0));
    }

    #[test]
    fn spectral_norm_dominates_probes(m in 1usize..10, n in 1usize..10, seed in any::<u64>()) {
        let a = matrix(m, n, seed);
        let sn = spectral_norm(&a);
        let mut s = derive_stream(seed, "probe");
        for _ in 0..10 {
            let v = s.gaussian(n, 1.0);
            let av = linalg::matvec(&a, &v).unwrap();
            prop_assert!(norm2(&av) <= sn * norm2(&v) * (1.0 + 1e-9));
        }
        let ata = linalg::matmul_tn(&a, &a).unwrap();
        prop_assert!((sn * sn - sym_eig(&ata).unwrap().max()).abs() < 1e-8 * sn * sn);
    }

    #[test]
    fn cos_alignment_is_scale_invariant(n in 1usize..30, c in 0.01f64..100.0, seed in any::<u64>()) {
        let mut s = derive_stream(seed, "cos");
        let u = s.gaussian(n, 1.0);
        let v = s.gaussian(n, 1.0);
        let base = cos_alignment(&u, &v).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        prop_assert!((cos_alignment(&u, &scaled).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<f64> = v.iter().map(|x| -x).collect();
        prop_assert!((cos_alignment(&u, &flipped).unwrap() + base).abs() < 1e-12);
        prop_assert!(base.abs() <= 1.0);
    }

    #[test]
    fn projection_is_idempotent(d in 1usize..6, extra in 1usize..10, seed in any::<u64>()) {
        let n = d + extra;
        let x = matrix(n, d, seed);
        let y = derive_stream(seed, "y").gaussian(n, 1.0);
        let p1 = project_y(&x, &y).unwrap();
        let p2 = project_y(&x, &p1).unwrap();
        prop_assert!(norm2(&linalg::sub_vec(&p1, &p2)) < 1e-9 * norm2(&y).max(1.0));
        prop_assert!(norm2(&p1) <= norm2(&y) * (1.0 + 1e-12));
    }

    #[test]
    fn oracle_tracks_random_linear_runs(n in 2usize..6, extra in 1usize..6, p in 5usize..40, seed in any::<u64>()) {
        let d = n + extra;
        let mut s = derive_stream(seed, "oracle");
        let x = Matrix::from_vec(n, d, s.gaussian(n * d, 1.0 / (d as f64).sqrt())).unwrap();
        let data = Dataset::new(x, s.gaussian(n, 1.0)).unwrap();
        let mut net = TwoLayerNet::init_gaussian(d, p, Activation::Identity, s.next_u64());
        let mut st = dyn_init(&data.x, &data.y, net.w(), net.beta(), net.b()).unwrap();
        for t in 0..40 {
            let lambda = if t < 20 { 0.5 } else { 0.0 };
            let e = fa_reg_step(&mut net, &data, 0.02, lambda).unwrap();
            prop_assert!(norm2(&linalg::sub_vec(st.e(), &e)) <= 1e-9 * norm2(&e).max(1e-12));
            dyn_step(&mut st, 0.02, lambda).unwrap();
        }
    }
}

/// Monte-Carlo means of ψ(Z)² and ψ′(Z), Z ~ N(0, 1).
fn monte_carlo_moments(act: Activation, samples: usize) -> (f64, f64) {
    let mut s = derive_stream(4242, act.name());
    let (mut m2, mut m1) = (0.0, 0.0);
    let chunk = 100_000;
    for _ in 0..samples / chunk {
        for z in s.gaussian(chunk, 1.0) {
            let v = act.eval(z);
            m2 += v * v;
            m1 += act.derivative_given(z, v);
        }
    }
    let k = (samples / chunk * chunk) as f64;
    (m2 / k, m1 / k)
}

fn same_to_three_digits(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-3 * a.abs().max(b.abs())
}

#[test]
fn activation_moments_match_monte_carlo() {
    for act in [Activation::Tanh, Activation::Sigmoid] {
        let (q_der, q_sq) = activation_moments(act).unwrap();
        let (mc_sq, mc_der) = monte_carlo_moments(act, 10_000_000);
        assert!(same_to_three_digits(q_sq, mc_sq), "{act:?}: {q_sq} vs {mc_sq}");
        assert!(same_to_three_digits(q_der, mc_der), "{act:?}: {q_der} vs {mc_der}");
    }
    // E Z⁴ = 3 and E cos Z = e^{-1/2} exactly
    assert!((gaussian_expectation(|z| z.powi(4)).unwrap() - 3.0).abs() < 1e-12);
    assert!((gaussian_expectation(f64::cos).unwrap() - (-0.5f64).exp()).abs() < 1e-12);
}

#[test]
fn isometry_tightens_with_dimension() {
    let spread = |d: usize| {
        let (lo, hi) = (0..20)
            .map(|k| isometry_extremes(20, d, 7, &format!("iso{k}")).unwrap())
            .fold((0.0, 0.0), |(a, b), (l, h)| (a + l, b + h));
        hi / lo
    };
    let (s1, s2, s3) = (spread(100), spread(400), spread(1600));
    assert!(s1 > s2 && s2 > s3, "{s1} {s2} {s3}");
    assert!(s3 < 1.5);
}

#[test]
fn b_norm_concentrates() {
    let dev = |p: usize| {
        (0..200)
            .map(|k| {
                let b = derive_stream(11, &format!("b{k}")).gaussian(p, 1.0);
                (linalg::dot(&b, &b).unwrap() / p as f64 - 1.0).abs()
            })
            .sum::<f64>()
            / 200.0
    };
    let (small, large) = (dev(100), dev(10_000));
    // mean |χ²_p/p − 1| ≈ √(2/p)·√(2/π)
    assert!((large / small - 0.1).abs() < 0.03, "{small} {large}");
}

#[test]
fn gram_sample_mean_matches_exact_expectation() {
    let (n, d) = (6, 20);
    let x = Matrix::from_vec(n, d, derive_stream(3, "gx").gaussian(n * d, 1.0 / (d as f64).sqrt())).unwrap();
    for act in [Activation::Tanh, Activation::Sigmoid] {
        let samples = fa_lab::verify::sample_grams(&x, act, 256, 400, 5, 1).unwrap();
        let exact = fa_lab::diagnostics::gram_expectation(&x, act).unwrap();
        let (entries, outside, worst) = fa_lab::verify::mean_outliers(&samples, &exact, 5.0);
        assert_eq!((entries, outside), (21, 0), "{act:?} worst z {worst}");
    }
}
