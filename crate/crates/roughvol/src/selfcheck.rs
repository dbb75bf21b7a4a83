//! A quick battery of identities and cross-checks, run by `roughvol selfcheck`.

use roughvol_core::gaussian::{check_derivative_identity, expect_psi, FnPath, GaussianLaw, Method, SymbolicFactor, VolFn};
use roughvol_core::kernel::{Covariance, HurstParam};
use roughvol_core::linalg::Matrix;
use roughvol_core::lower_bound::constants_sweep;
use roughvol_core::moments::{continuous_moment, discrete_moment_quadrature, discrete_moment_wick, ModelSpec};
use roughvol_core::words::{enumerate_words, is_trivial, Letter};

use crate::output::Check;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

fn run(name: &str, f: impl FnOnce() -> Outcome) -> Check {
    match f() {
        Ok((passed, detail)) => Check::new(name, passed, detail),
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

pub fn run_all() -> Vec<Check> {
    vec![
        run("word counts", word_counts),
        run("trivial words", trivial_words),
        run("covariance identities", covariance_identities),
        run("gaussian methods", gaussian_methods),
        run("derivative identity", derivative_identity),
        run("brownian moments", brownian_moments),
        run("oracle triangulation", oracle_triangulation),
        run("beta vs integral", beta_agreement),
    ]
}

fn word_counts() -> Outcome {
    let (mut a, mut b) = (1usize, 1usize);
    for n in 1..=12 {
        let got = enumerate_words(n)?.len();
        if got != b {
            return Ok((false, format!("N={n}: {got} words, expected {b}")));
        }
        (a, b) = (b, a + b);
    }
    let show = |n| -> Result<Vec<String>, Box<dyn std::error::Error>> {
        Ok(enumerate_words(n)?.iter().map(|w| w.to_string()).collect())
    };
    let three = show(3)?;
    let four = show(4)?;
    let ok3 = three == ["III", "IJ", "JI"];
    let ok4 = four == ["IIII", "IIJ", "IJI", "JII", "JJ"];
    Ok((ok3 && ok4, format!("Fibonacci up to N=12; N=3 {three:?}; N=4 {four:?}")))
}

fn trivial_words() -> Outcome {
    for n in 1..=8 {
        for w in enumerate_words(n)? {
            if is_trivial(&w) != (w.letters.last() == Some(&Letter::I)) {
                return Ok((false, format!("{w}")));
            }
        }
    }
    Ok((true, "trivial exactly when the last letter is I, N ≤ 8".into()))
}

fn covariance_identities() -> Outcome {
    let mut worst: f64 = 0.0;
    for &h in &[0.05, 0.1, 0.25, 0.4] {
        let c = Covariance::with_nodes(HurstParam::new(h)?, 30);
        for &(t, s) in &[(1.0, 0.3), (1.0, 0.7), (2.0, 1.999), (0.5, 0.01)] {
            let closed = c.eval(t, s);
            if closed != c.eval(s, t) {
                return Ok((false, format!("asymmetric at H={h} ({t},{s})")));
            }
            worst = worst.max((closed - c.eval_quadrature(t, s)).abs() / closed.max(1.0));
        }
        let diag = c.eval(1.5, 1.5);
        worst = worst.max((diag - 1.5f64.powf(2.0 * h) / (2.0 * h)).abs());
    }
    let b = Covariance::new(HurstParam::new(0.5)?);
    let brownian = b.eval(0.8, 0.3) == 0.3 && b.eval(0.3, 0.8) == 0.3;
    Ok((worst < 1e-10 && brownian, format!("closed form vs quadrature max deviation {worst:.2e}")))
}

fn gaussian_methods() -> Outcome {
    let sigma = Matrix::from_rows(&[&[1.0, 0.3, -0.2], &[0.3, 0.8, 0.1], &[-0.2, 0.1, 1.3]]);
    let law = GaussianLaw::new(sigma)?;
    let f = VolFn::Linear { c1: 1.0 };
    let mut worst: f64 = 0.0;
    for powers in [[2, 1, 1], [1, 2, 3], [4, 0, 2], [2, 2, 2]] {
        let psi = SymbolicFactor::powers(&powers);
        let w = expect_psi(&psi, &law, &f, Method::Wick)?;
        let h = expect_psi(&psi, &law, &f, Method::Hermite)?;
        worst = worst.max((w - h).abs() / w.abs().max(1.0));
    }
    Ok((worst < 1e-8, format!("Wick vs Hermite max deviation {worst:.2e}")))
}

fn derivative_identity() -> Outcome {
    let f = VolFn::Linear { c1: 1.0 };
    let u: [f64; 2] = [0.5, 1.0];
    // ∂ₜΣ is indefinite at t = 0.8
    let bridge = FnPath {
        sigma: move |t: f64| Matrix::from_fn(2, |k, l| t * u[k].min(u[l]) - t * t * u[k] * u[l]),
        d_sigma: move |t: f64| Matrix::from_fn(2, |k, l| u[k].min(u[l]) - 2.0 * t * u[k] * u[l]),
    };
    let r1 = check_derivative_identity(&SymbolicFactor::powers(&[1, 1]), &bridge, 0.8, &f)?;
    let r2 = check_derivative_identity(&SymbolicFactor::powers(&[2, 2]), &bridge, 0.8, &f)?;
    let scalar = FnPath { sigma: |t: f64| Matrix::from_rows(&[&[t]]), d_sigma: |_| Matrix::from_rows(&[&[1.0]]) };
    let r3 = check_derivative_identity(&SymbolicFactor::powers(&[4]), &scalar, 1.0, &f)?;
    let worst = r1.max(r2).max(r3);
    Ok((worst < 1e-6, format!("max residual {worst:.2e}")))
}

fn brownian_moments() -> Outcome {
    let f = VolFn::Linear { c1: 1.0 };
    let mut worst: f64 = 0.0;
    for (rho, order, want) in [(1.0, 2, 0.5), (1.0, 3, 1.0), (1.0, 4, 3.75), (0.0, 4, 1.75)] {
        let m = ModelSpec::new(0.5, rho, 1.0, f)?;
        worst = worst.max((continuous_moment(&m, order, 1e-9)?.value - want).abs());
    }
    Ok((worst < 1e-6, format!("max deviation {worst:.2e}")))
}

fn oracle_triangulation() -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    let mut cases = 0;
    for h in [0.1, 0.3] {
        for rho in [0.0, 0.7, 1.0] {
            for order in [2, 3, 4] {
                for n in [4, 8] {
                    let m = ModelSpec::new(h, rho, 1.0, VolFn::Linear { c1: 1.0 })?;
                    let q = discrete_moment_quadrature(&m, order, n, 1e-8)?;
                    let w = discrete_moment_wick(&m, order, n)?;
                    let bound = (3.0 * q.error_estimate).max(1e-6);
                    worst_ratio = worst_ratio.max((q.value - w.value).abs() / bound);
                    cases += 1;
                }
            }
        }
    }
    Ok((worst_ratio <= 1.0, format!("{cases} cases, worst gap/bound {worst_ratio:.3}")))
}

fn beta_agreement() -> Outcome {
    let rows = constants_sweep(0.001, 0.125, 50, 1e-10)?;
    let gap = rows.iter().map(|r| r.max_gap()).fold(0.0, f64::max);
    let min_diff = rows.iter().map(|r| r.beta.difference()).fold(f64::INFINITY, f64::min);
    Ok((gap <= 1e-8 && min_diff > 0.0, format!("50 points, max gap {gap:.2e}, min C2 − C3 {min_diff:.4}")))
}
