use proptest::prelude::*;
use roughvol_core::gaussian::{expect_psi, GaussianLaw, Method, Monomial, SymbolicFactor, VolFn};
use roughvol_core::kernel::{joint_grid_covariance, Covariance, GridSpec, HurstParam};
use roughvol_core::linalg::{Cholesky, Matrix};
use roughvol_core::moments::{continuous_moment, weak_error, ModelSpec};
use roughvol_core::words::{enumerate_words, expand_word, is_trivial, Letter};

fn hp(h: f64) -> HurstParam {
    HurstParam::new(h).unwrap()
}

/// `C(t,s)` for `s < t` from the series
/// `t^a Σ_k binom(a,k) (−s/t)^k s^{a+1} B(a+1, k+1)`, `a = H − 1/2`.
fn covariance_series(t: f64, s: f64, h: f64) -> f64 {
    let a = h - 0.5;
    let r = s / t;
    let mut binom = 1.0;
    let mut beta = 1.0 / (a + 1.0);
    let mut pow = 1.0;
    let mut acc = 0.0;
    for k in 0..4000 {
        let term = binom * pow * beta;
        acc += term;
        if k > 10 && term.abs() < 1e-18 * acc.abs() {
            break;
        }
        let kf = k as f64;
        binom *= (a - kf) / (kf + 1.0);
        pow *= -r;
        beta *= (kf + 1.0) / (a + kf + 2.0);
    }
    t.powf(a) * s.powf(a + 1.0) * acc
}

fn random_spd(m: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-1.0f64..1.0, m * m).prop_map(move |a| {
        Matrix::from_fn(m, |i, j| {
            let mut s = if i == j { 0.1 } else { 0.0 };
            for k in 0..m {
                s += a[i * m + k] * a[j * m + k];
            }
            s
        })
    })
}

/// A random monomial in `m` variables with at most `max_factors` factors per
/// variable and derivative orders up to `max_order`.
fn random_monomial(m: usize, max_factors: usize, max_order: u8) -> impl Strategy<Value = Monomial> {
    proptest::collection::vec(proptest::collection::vec(0..=max_order, 0..=max_factors), m).prop_map(Monomial::new)
}

fn spd_and_psi(max_order: u8, max_dim: usize) -> impl Strategy<Value = (Matrix, SymbolicFactor)> {
    (1..=max_dim).prop_flat_map(move |m| {
        (random_spd(m), proptest::collection::vec((-2.0f64..2.0, random_monomial(m, 2, max_order)), 1..4))
            .prop_map(move |(s, terms)| (s, SymbolicFactor::from_terms(m, terms)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_matches_series(h in 0.02f64..0.5, t in 0.05f64..3.0, r in 0.02f64..0.9) {
        let s = r * t;
        let want = covariance_series(t, s, h);
        let cov = Covariance::new(hp(h));
        let got = cov.eval(t, s);
        prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0), "C({t},{s}) H={h}: {got} vs {want}");
        prop_assert_eq!(got, cov.eval(s, t));
    }

    #[test]
    fn covariance_self_similar(h in 0.02f64..0.5, t in 0.05f64..1.0, r in 0.0f64..1.0, c in 0.2f64..5.0) {
        let s = r * t;
        let cov = Covariance::new(hp(h));
        let lhs = cov.eval(c * t, c * s);
        let rhs = c.powf(2.0 * h) * cov.eval(t, s);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn joint_grid_covariance_is_psd(h in 0.02f64..0.5, n in 1usize..24, horizon in 0.1f64..2.0) {
        let g = GridSpec::new(n, horizon).unwrap();
        let j = joint_grid_covariance(g, hp(h));
        prop_assert!(j.matrix.is_symmetric(0.0));
        let c = Cholesky::semidefinite(&j.matrix, 1e-10).unwrap();
        let scale = (0..j.matrix.dim()).map(|i| j.matrix[(i, i)]).fold(0.0, f64::max);
        prop_assert!(c.min_pivot >= -1e-10 * scale);
    }

    #[test]
    fn linear_methods_agree((sigma, psi) in spd_and_psi(1, 4), c1 in 0.2f64..2.0) {
        let f = VolFn::Linear { c1 };
        let law = GaussianLaw::new(sigma).unwrap();
        let wick = expect_psi(&psi, &law, &f, Method::Wick).unwrap();
        let analytic = expect_psi(&psi, &law, &f, Method::Analytic).unwrap();
        let hermite = expect_psi(&psi, &law, &f, Method::Hermite).unwrap();
        let scale = wick.abs().max(1.0);
        prop_assert!((wick - analytic).abs() <= 1e-12 * scale, "{wick} vs {analytic}");
        prop_assert!((wick - hermite).abs() <= 1e-8 * scale, "{wick} vs {hermite}");
    }

    #[test]
    fn exponential_methods_agree((sigma, psi) in spd_and_psi(3, 3), c3 in -0.6f64..0.6) {
        let f = VolFn::Exponential { c2: 0.8, c3 };
        let law = GaussianLaw::new(sigma).unwrap();
        let analytic = expect_psi(&psi, &law, &f, Method::Analytic).unwrap();
        let hermite = expect_psi(&psi, &law, &f, Method::Hermite).unwrap();
        prop_assert!((analytic - hermite).abs() <= 1e-7 * analytic.abs().max(1.0), "{analytic} vs {hermite}");
    }

    #[test]
    fn expectation_is_linear((sigma, psi) in spd_and_psi(2, 4), c in -3.0f64..3.0) {
        let f = VolFn::Exponential { c2: 1.0, c3: 0.3 };
        let law = GaussianLaw::new(sigma).unwrap();
        let base = expect_psi(&psi, &law, &f, Method::Analytic).unwrap();
        let scaled = expect_psi(&psi.scaled(c), &law, &f, Method::Analytic).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-12 * (c * base).abs().max(1.0));
    }

    #[test]
    fn expectation_is_permutation_invariant(
        (sigma, psi) in spd_and_psi(1, 4),
        seed in any::<u64>(),
    ) {
        let m = sigma.dim();
        let mut perm: Vec<usize> = (0..m).collect();
        let mut state = seed;
        for i in (1..m).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let f = VolFn::Linear { c1: 1.3 };
        let base = expect_psi(&psi, &GaussianLaw::new(sigma.clone()).unwrap(), &f, Method::Wick).unwrap();
        // new variable i is old variable perm[i]
        let permuted_sigma = sigma.select(&perm);
        let permuted = expect_psi(&psi.permuted(&perm), &GaussianLaw::new(permuted_sigma).unwrap(), &f, Method::Wick).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-12 * base.abs().max(1.0), "{base} vs {permuted}");
    }
}

#[test]
fn kernel_edges_are_ordered_and_rho_zero_filters() {
    let f = VolFn::Linear { c1: 1.0 };
    for n in 1..=6 {
        for w in enumerate_words(n).unwrap() {
            assert_eq!(is_trivial(&w), w.letters.last() == Some(&Letter::I));
            if is_trivial(&w) {
                continue;
            }
            for t in expand_word(&w, &f, 1.0, false).unwrap() {
                for (parent, child) in t.edges.edges() {
                    assert!(parent < child, "{w}: edge {parent} -> {child}");
                }
            }
            let zero = expand_word(&w, &f, 0.0, false).unwrap();
            if w.is_pure_j() {
                let fact: f64 = (1..=n).map(|k| k as f64).product();
                assert_eq!(zero.len(), 1);
                assert_eq!(zero[0].coefficient, fact / 2f64.powi(w.len() as i32));
            } else {
                assert!(zero.iter().all(|t| t.coefficient == 0.0), "{w}");
            }
        }
    }
}

#[test]
fn weak_error_parity_in_rho() {
    let cases = [(0.15, 0.6, 2, 4), (0.3, 0.35, 3, 4), (0.1, 0.8, 4, 8), (0.45, 0.5, 3, 8)];
    for (h, rho, order, n) in cases {
        let plus = ModelSpec::new(h, rho, 1.0, VolFn::Linear { c1: 1.0 }).unwrap();
        let minus = ModelSpec { rho: -rho, ..plus };
        let a = weak_error(&plus, order, n, 1e-6).unwrap();
        let b = weak_error(&minus, order, n, 1e-6).unwrap();
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        let tol = a.error_estimate + b.error_estimate + 1e-10;
        assert!((a.error - sign * b.error).abs() <= tol, "H={h} N={order}: {} vs {}", a.error, b.error);
        assert!((a.continuous.value - sign * b.continuous.value).abs() <= tol);
    }
}

#[test]
fn refinement_is_monotone() {
    for (h, rho, order) in [(0.1, 1.0, 3), (0.25, 0.5, 4), (0.4, -0.7, 3)] {
        let model = ModelSpec::new(h, rho, 1.0, VolFn::Linear { c1: 1.0 }).unwrap();
        let coarse = continuous_moment(&model, order, 1e-6).unwrap();
        let fine = continuous_moment(&model, order, 5e-7).unwrap();
        assert!(
            (coarse.value - fine.value).abs() <= coarse.error_estimate.max(1e-15),
            "H={h}: {} vs {} (estimate {})",
            coarse.value,
            fine.value,
            coarse.error_estimate
        );
    }
}
