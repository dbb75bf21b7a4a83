//! Gauss rules (Legendre, Jacobi, probabilists' Hermite) and the graded
//! composite rule used for the iterated simplex integrals.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math::{cos, exp, powf, powi, sqrt};
use crate::special::ln_gamma;
use crate::{Error, Result};

/// Nodes and weights of an interpolatory rule on a reference interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Gauss–Legendre on [−1, 1].
    pub fn legendre(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = cos(PI * (i as f64 + 0.75) / (n as f64 + 0.5));
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_eval(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_eval(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussRule { nodes, weights }
    }

    /// Gauss–Jacobi on [−1, 1] for the weight `(1−x)^alpha (1+x)^beta`.
    pub fn jacobi(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > -1.0 && beta > -1.0) {
            return Err(Error::invalid("Jacobi exponents must exceed -1"));
        }
        let ab = alpha + beta;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n];
        diag[0] = (beta - alpha) / (ab + 2.0);
        for k in 1..n {
            let kf = k as f64;
            let s = 2.0 * kf + ab;
            diag[k] = (beta * beta - alpha * alpha) / (s * (s + 2.0));
            let b = if k == 1 {
                4.0 * (1.0 + alpha) * (1.0 + beta) / (powi(2.0 + ab, 2) * (3.0 + ab))
            } else {
                4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab) / (s * s * (s + 1.0) * (s - 1.0))
            };
            off[k] = sqrt(b);
        }
        let mu0 = exp(
            (ab + 1.0) * core::f64::consts::LN_2 + ln_gamma(alpha + 1.0)? + ln_gamma(beta + 1.0)?
                - ln_gamma(ab + 2.0)?,
        );
        let (nodes, first) = symmetric_tridiagonal_eigen(diag, off)?;
        let weights = first.iter().map(|z| mu0 * z * z).collect();
        Ok(GaussRule { nodes, weights })
    }

    /// Gauss–Hermite for the standard normal density: `Σ wᵢ g(xᵢ) ≈ E[g(Z)]`.
    pub fn hermite_normal(n: usize) -> Result<Self> {
        let diag = vec![0.0; n];
        let mut off = vec![0.0; n];
        for (k, o) in off.iter_mut().enumerate().skip(1) {
            *o = sqrt(k as f64);
        }
        let (nodes, first) = symmetric_tridiagonal_eigen(diag, off)?;
        let weights = first.iter().map(|z| z * z).collect();
        Ok(GaussRule { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[a, b]` with the rule mapped affinely (Legendre only).
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(c + h * x);
        }
        acc * h
    }
}

fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Eigenvalues (ascending) and first eigenvector components of the symmetric
/// tridiagonal matrix with diagonal `d` and sub-diagonal `e[1..]`.
/// Implicit QL with Wilkinson shifts.
fn symmetric_tridiagonal_eigen(mut d: Vec<f64>, e_in: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = d.len();
    let mut e = vec![0.0; n];
    e[..(n - 1)].copy_from_slice(&e_in[1..n]);
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::invalid("tridiagonal eigenvalue iteration did not converge"));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = libm::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let mut f = s * e[i];
                let b = c * e[i];
                r = libm::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    Ok((idx.iter().map(|&i| d[i]).collect(), idx.iter().map(|&i| z[i]).collect()))
}

/// Composite Gauss rule on `[lo, hi]`, geometrically graded toward both
/// endpoints.
///
/// Each half of the interval is cut at `lo + (L/2)·σᵏ` (resp. `hi − (L/2)·σᵏ`),
/// k = 1..levels, so algebraic endpoint singularities are resolved with a
/// number of nodes logarithmic in the target accuracy. When a kernel
/// exponent is given, the weights integrate `g(t)·(hi − t)^a` and the panel
/// touching `hi` uses Gauss–Jacobi.
#[derive(Debug, Clone)]
pub struct GradedRule {
    legendre: GaussRule,
    jacobi: Option<(f64, GaussRule)>,
    ratio: f64,
    levels: usize,
}

impl GradedRule {
    pub fn new(nodes_per_panel: usize, levels: usize, ratio: f64, kernel_exponent: Option<f64>) -> Result<Self> {
        let jacobi = match kernel_exponent {
            Some(a) if a != 0.0 => Some((a, GaussRule::jacobi(nodes_per_panel, a, 0.0)?)),
            _ => None,
        };
        Ok(GradedRule {
            legendre: GaussRule::legendre(nodes_per_panel),
            jacobi,
            ratio,
            levels,
        })
    }

    pub fn kernel_exponent(&self) -> f64 {
        self.jacobi.as_ref().map_or(0.0, |(a, _)| *a)
    }

    /// Upper bound on the number of nodes produced per call.
    pub fn size(&self) -> usize {
        2 * (self.levels + 1) * self.legendre.len()
    }

    fn push_panel(&self, a: f64, b: f64, weight_exp: Option<f64>, hi: f64, out: &mut Vec<(f64, f64)>) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        for (x, w) in self.legendre.nodes.iter().zip(&self.legendre.weights) {
            let t = c + h * x;
            let mut wt = w * h;
            if let Some(e) = weight_exp {
                wt *= powf(hi - t, e);
            }
            out.push((t, wt));
        }
    }

    /// Appends `(t, w)` pairs to `out`. With `kernel = true` the weights carry
    /// the factor `(hi − t)^a` for the rule's exponent `a`.
    pub fn nodes_into(&self, lo: f64, hi: f64, kernel: bool, out: &mut Vec<(f64, f64)>) {
        if hi <= lo {
            return;
        }
        let exp_k = if kernel { self.jacobi.as_ref().map(|(a, _)| *a) } else { None };
        let half = 0.5 * (hi - lo);
        // grading stops where panels would fall below floating-point resolution
        let levels_near = |x: f64| {
            let floor = (1e3 * f64::EPSILON * x.abs()).max(1e-280);
            let mut levels = self.levels;
            while levels > 0 && half * powf(self.ratio, levels as f64) < floor {
                levels -= 1;
            }
            levels
        };
        // lower half, from the endpoint outward
        let lower_levels = levels_near(lo);
        let mut a = lo;
        let mut scale = half * powf(self.ratio, lower_levels as f64);
        for _ in 0..=lower_levels {
            let b = lo + scale;
            self.push_panel(a, b, exp_k, hi, out);
            a = b;
            scale /= self.ratio;
        }
        // upper half, toward hi
        let mut scale = half;
        let mut a = lo + half;
        for _ in 0..levels_near(hi) {
            let b = hi - scale * self.ratio;
            self.push_panel(a, b, exp_k, hi, out);
            a = b;
            scale *= self.ratio;
        }
        match (&self.jacobi, exp_k) {
            (Some((e, rule)), Some(_)) => {
                let b = hi;
                let c = 0.5 * (a + b);
                let h = 0.5 * (b - a);
                let scale = powf(h, e + 1.0);
                for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                    out.push((c + h * x, w * scale));
                }
            }
            _ => self.push_panel(a, hi, None, hi, out),
        }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, kernel: bool, mut f: F) -> f64 {
        let mut buf = Vec::with_capacity(self.size());
        self.nodes_into(lo, hi, kernel, &mut buf);
        buf.iter().map(|&(t, w)| w * f(t)).sum()
    }
}

/// Adaptive Gauss–Legendre by bisection. Returns `(value, error estimate)`.
pub fn adaptive_legendre<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
) -> (f64, f64) {
    let rule = GaussRule::legendre(16);
    let whole = rule.integrate(a, b, &mut *f);
    adaptive_step(f, &rule, a, b, whole, tol, max_depth)
}

fn adaptive_step<F: FnMut(f64) -> f64>(
    f: &mut F,
    rule: &GaussRule,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, &mut *f);
    let right = rule.integrate(m, b, &mut *f);
    let err = (left + right - whole).abs();
    if err <= tol || depth == 0 {
        return (left + right, err);
    }
    let (l, el) = adaptive_step(f, rule, a, m, left, 0.5 * tol, depth - 1);
    let (r, er) = adaptive_step(f, rule, m, b, right, 0.5 * tol, depth - 1);
    (l + r, el + er)
}
