//! Gaussian expectations of products of volatility-function derivatives.
//!
//! The integrands produced by [`crate::words`] are finite sums of elementary
//! products `∏ⱼ ∏ₖ f^{(dⱼₖ)}(xⱼ)`. Their expectation under a centred Gaussian
//! law is computed exactly for the linear family (Isserlis/Wick pairings or
//! moment-generating-function coefficients), in closed form for the
//! exponential family, and by tensorised Gauss–Hermite otherwise.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{Cholesky, Matrix};
use crate::math::{exp, powi, sqrt, tanh};
use crate::quadrature::GaussRule;
use crate::{Error, Result};

/// Volatility function families.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case"))]
pub enum VolFn {
    /// `f(x) = c₁ x`
    Linear { c1: f64 },
    /// `f(x) = c₂ exp(c₃ x)`
    Exponential { c2: f64, c3: f64 },
    /// `f(x) = 1 + tanh(x)`
    ShiftedTanh,
}

/// Highest derivative order any family is asked to evaluate.
pub const MAX_DERIVATIVE_ORDER: u8 = 16;

impl VolFn {
    pub fn name(&self) -> &'static str {
        match self {
            VolFn::Linear { .. } => "linear",
            VolFn::Exponential { .. } => "exponential",
            VolFn::ShiftedTanh => "shifted-tanh",
        }
    }

    pub fn max_derivative_order(&self) -> u8 {
        MAX_DERIVATIVE_ORDER
    }

    /// `f^{(d)}(x)`.
    pub fn derivative(&self, d: u8, x: f64) -> f64 {
        match *self {
            VolFn::Linear { c1 } => match d {
                0 => c1 * x,
                1 => c1,
                _ => 0.0,
            },
            VolFn::Exponential { c2, c3 } => c2 * powi(c3, d as i32) * exp(c3 * x),
            VolFn::ShiftedTanh => {
                let tau = tanh(x);
                let poly = tanh_derivative_poly(d);
                let mut acc = 0.0;
                for c in poly.iter().rev() {
                    acc = acc * tau + c;
                }
                acc
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    /// Constants `(C_f', C_f)` with `|f^{(d)}(x)| ≤ C_f' exp(C_f |x|)` for
    /// all `d ≤ order`.
    pub fn growth_constants(&self, order: u8) -> (f64, f64) {
        match *self {
            // |c₁ x| ≤ |c₁| e^{|x|}
            VolFn::Linear { c1 } => (c1.abs().max(f64::MIN_POSITIVE), 1.0),
            VolFn::Exponential { c2, c3 } => {
                let m = (0..=order).map(|d| powi(c3.abs(), d as i32)).fold(0.0, f64::max);
                (c2.abs() * m, c3.abs())
            }
            VolFn::ShiftedTanh => {
                let poly_bound = |d: u8| tanh_derivative_poly(d).iter().map(|c| c.abs()).sum::<f64>();
                ((0..=order).map(poly_bound).fold(0.0, f64::max), 0.0)
            }
        }
    }
}

/// Coefficients (ascending powers of τ = tanh x) of the d-th derivative of
/// `1 + tanh x`, using `dτ/dx = 1 − τ²`.
fn tanh_derivative_poly(d: u8) -> Vec<f64> {
    let mut p = vec![1.0, 1.0];
    for _ in 0..d {
        // p'(τ)(1 − τ²)
        let dp: Vec<f64> = (1..p.len()).map(|k| k as f64 * p[k]).collect();
        let mut next = vec![0.0; dp.len() + 2];
        for (k, c) in dp.iter().enumerate() {
            next[k] += c;
            next[k + 2] -= c;
        }
        while next.len() > 1 && *next.last().unwrap() == 0.0 {
            next.pop();
        }
        p = next;
    }
    p
}

/// Elementary product `∏ⱼ ∏_{d ∈ factors[j]} f^{(d)}(xⱼ)`; each
/// per-variable list is kept sorted so equal products compare equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Monomial {
    pub factors: Vec<Vec<u8>>,
}

impl Monomial {
    pub fn new(mut factors: Vec<Vec<u8>>) -> Self {
        for f in &mut factors {
            f.sort_unstable();
        }
        Monomial { factors }
    }

    pub fn vars(&self) -> usize {
        self.factors.len()
    }

    /// Total derivative order.
    pub fn derivative_count(&self) -> usize {
        self.factors.iter().flatten().map(|&d| d as usize).sum()
    }

    pub fn max_order(&self) -> u8 {
        self.factors.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Product rule in variable `var`: one monomial per factor of `x_var`,
    /// with multiplicities merged.
    pub fn differentiate(&self, var: usize) -> Vec<(f64, Monomial)> {
        let mut out: BTreeMap<Monomial, f64> = BTreeMap::new();
        let slots = &self.factors[var];
        for k in 0..slots.len() {
            if k > 0 && slots[k] == slots[k - 1] {
                continue;
            }
            let mult = slots.iter().filter(|&&d| d == slots[k]).count() as f64;
            let mut next = self.clone();
            next.factors[var][k] += 1;
            next.factors[var].sort_unstable();
            *out.entry(next).or_insert(0.0) += mult;
        }
        out.into_iter().map(|(m, c)| (c, m)).collect()
    }

    pub fn evaluate(&self, f: &VolFn, x: &[f64]) -> f64 {
        let mut acc = 1.0;
        for (j, slots) in self.factors.iter().enumerate() {
            for &d in slots {
                acc *= f.derivative(d, x[j]);
            }
        }
        acc
    }

    pub fn permuted(&self, perm: &[usize]) -> Monomial {
        Monomial::new(perm.iter().map(|&p| self.factors[p].clone()).collect())
    }
}

/// Sum of weighted elementary products over `m` variables.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SymbolicFactor {
    pub vars: usize,
    pub terms: Vec<(f64, Monomial)>,
}

impl SymbolicFactor {
    pub fn monomial(coefficient: f64, mono: Monomial) -> Self {
        SymbolicFactor { vars: mono.vars(), terms: vec![(coefficient, mono)] }
    }

    /// `∏ⱼ f(xⱼ)^{powers[j]}`.
    pub fn powers(powers: &[usize]) -> Self {
        Self::monomial(1.0, Monomial::new(powers.iter().map(|&p| vec![0; p]).collect()))
    }

    pub fn from_terms(vars: usize, terms: Vec<(f64, Monomial)>) -> Self {
        let mut merged: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (c, m) in terms {
            debug_assert_eq!(m.vars(), vars);
            *merged.entry(m).or_insert(0.0) += c;
        }
        SymbolicFactor {
            vars,
            terms: merged.into_iter().filter(|(_, c)| *c != 0.0).map(|(m, c)| (c, m)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        SymbolicFactor {
            vars: self.vars,
            terms: self.terms.iter().map(|(k, m)| (k * c, m.clone())).collect(),
        }
    }

    pub fn differentiate(&self, var: usize) -> Self {
        let mut terms = Vec::new();
        for (c, m) in &self.terms {
            for (k, d) in m.differentiate(var) {
                terms.push((c * k, d));
            }
        }
        Self::from_terms(self.vars, terms)
    }

    /// Relabels variables: new variable `i` is old variable `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::from_terms(self.vars, self.terms.iter().map(|(c, m)| (*c, m.permuted(perm))).collect())
    }

    pub fn evaluate(&self, f: &VolFn, x: &[f64]) -> f64 {
        self.terms.iter().map(|(c, m)| c * m.evaluate(f, x)).sum()
    }

    pub fn max_order(&self) -> u8 {
        self.terms.iter().map(|(_, m)| m.max_order()).max().unwrap_or(0)
    }
}

/// Centred Gaussian law on `R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub sigma: Matrix,
}

impl GaussianLaw {
    pub fn new(sigma: Matrix) -> Result<Self> {
        if !sigma.is_symmetric(1e-12 * sigma.trace().abs().max(1.0)) {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        Cholesky::semidefinite(&sigma, 1e-10)?;
        Ok(GaussianLaw { sigma })
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    /// Closed forms: MGF coefficients (linear) or `exp(½aᵀΣa)` (exponential).
    Analytic,
    /// Isserlis pairings, linear family only.
    Wick,
    /// Tensorised Gauss–Hermite after Cholesky whitening.
    Hermite,
}

impl Method {
    /// The exact method for a family when one exists.
    pub fn preferred(f: &VolFn) -> Method {
        match f {
            VolFn::Linear { .. } => Method::Wick,
            VolFn::Exponential { .. } => Method::Analytic,
            VolFn::ShiftedTanh => Method::Hermite,
        }
    }
}

pub const HERMITE_MAX_DIM: usize = 8;
const HERMITE_START_NODES: usize = 20;
const HERMITE_MAX_NODES: usize = 80;
const HERMITE_POINT_BUDGET: usize = 50_000_000;
pub const HERMITE_DEFAULT_TOL: f64 = 1e-10;

/// `E[ψ(X)]` for `X ~ law`.
pub fn expect_psi(psi: &SymbolicFactor, law: &GaussianLaw, f: &VolFn, method: Method) -> Result<f64> {
    if psi.vars != law.dim() {
        return Err(Error::invalid(format!(
            "psi has {} variables but the law has dimension {}",
            psi.vars,
            law.dim()
        )));
    }
    PreparedPsi::new(psi, f, method)?.expect(&law.sigma)
}

/// A symbolic factor compiled for repeated evaluation under varying
/// covariances (one compile per integrand, one `expect` per quadrature node).
#[derive(Debug, Clone)]
pub struct PreparedPsi {
    vars: usize,
    kind: Prepared,
}

#[derive(Debug, Clone)]
enum Prepared {
    /// Σ c · E[x^κ], merged by κ
    Polynomial { terms: Vec<(f64, Vec<u8>)>, mgf: bool },
    /// Σ c · exp(½ aᵀΣa)
    Exponential { terms: Vec<(f64, Vec<f64>)> },
    Hermite { psi: SymbolicFactor, f: VolFn, tol: f64 },
}

impl PreparedPsi {
    pub fn new(psi: &SymbolicFactor, f: &VolFn, method: Method) -> Result<Self> {
        Self::with_tol(psi, f, method, HERMITE_DEFAULT_TOL)
    }

    pub fn with_tol(psi: &SymbolicFactor, f: &VolFn, method: Method, hermite_tol: f64) -> Result<Self> {
        let vars = psi.vars;
        if psi.max_order() > f.max_derivative_order() {
            return Err(Error::Unsupported {
                family: f.name(),
                what: format!("derivatives of order {}", psi.max_order()),
            });
        }
        let kind = match (method, f) {
            (Method::Wick | Method::Analytic, VolFn::Linear { c1 }) => {
                let mut merged: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
                for (c, m) in &psi.terms {
                    if m.max_order() >= 2 {
                        continue;
                    }
                    let slots: usize = m.factors.iter().map(|s| s.len()).sum();
                    let kappa: Vec<u8> =
                        m.factors.iter().map(|s| s.iter().filter(|&&d| d == 0).count() as u8).collect();
                    *merged.entry(kappa).or_insert(0.0) += c * powi(*c1, slots as i32);
                }
                Prepared::Polynomial {
                    terms: merged.into_iter().filter(|(_, c)| *c != 0.0).map(|(k, c)| (c, k)).collect(),
                    mgf: method == Method::Analytic,
                }
            }
            (Method::Analytic, VolFn::Exponential { c2, c3 }) => {
                let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
                for (c, m) in &psi.terms {
                    let mut coef = *c;
                    for &d in m.factors.iter().flatten() {
                        coef *= c2 * powi(*c3, d as i32);
                    }
                    let counts: Vec<usize> = m.factors.iter().map(|s| s.len()).collect();
                    *merged.entry(counts).or_insert(0.0) += coef;
                }
                Prepared::Exponential {
                    terms: merged
                        .into_iter()
                        .map(|(k, c)| (c, k.iter().map(|&n| n as f64 * c3).collect()))
                        .collect(),
                }
            }
            (Method::Hermite, _) => {
                if vars > HERMITE_MAX_DIM {
                    return Err(Error::Dimension { what: "Gauss-Hermite", dim: vars, max: HERMITE_MAX_DIM });
                }
                Prepared::Hermite { psi: psi.clone(), f: *f, tol: hermite_tol }
            }
            (m, f) => {
                return Err(Error::Unsupported { family: f.name(), what: format!("method {m:?}") });
            }
        };
        Ok(PreparedPsi { vars, kind })
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            Prepared::Polynomial { terms, .. } => terms.is_empty(),
            Prepared::Exponential { terms } => terms.is_empty(),
            Prepared::Hermite { psi, .. } => psi.terms.is_empty(),
        }
    }

    pub fn expect(&self, sigma: &Matrix) -> Result<f64> {
        match &self.kind {
            Prepared::Polynomial { terms, mgf } => {
                let mut acc = 0.0;
                for (c, kappa) in terms {
                    let v = if *mgf { moment_mgf(kappa, sigma) } else { moment_wick(kappa, sigma, None) };
                    acc += c * v;
                }
                Ok(acc)
            }
            Prepared::Exponential { terms } => {
                Ok(terms.iter().map(|(c, a)| c * exp(0.5 * sigma.quadratic_form(a))).sum())
            }
            Prepared::Hermite { psi, f, tol } => hermite_expectation(psi, f, sigma, *tol),
        }
    }
}

/// Mixed-radix index of a degree signature inside the box `∏(κⱼ+1)`.
struct SignatureBox {
    radix: Vec<usize>,
    size: usize,
}

impl SignatureBox {
    fn new(kappa: &[u8]) -> Self {
        let mut radix = Vec::with_capacity(kappa.len());
        let mut size = 1usize;
        for &k in kappa {
            radix.push(size);
            size *= k as usize + 1;
        }
        SignatureBox { radix, size }
    }

    fn index(&self, sig: &[u8]) -> usize {
        sig.iter().zip(&self.radix).map(|(&k, &r)| k as usize * r).sum()
    }
}

/// `E[∏ⱼ Xⱼ^{κⱼ}]` for `X ~ N(mean, Σ)` by recursive pairing over the
/// degree signature, memoised on a dense table of sub-signatures.
pub fn moment_wick(kappa: &[u8], sigma: &Matrix, mean: Option<&[f64]>) -> f64 {
    let total: usize = kappa.iter().map(|&k| k as usize).sum();
    if mean.is_none() && total % 2 == 1 {
        return 0.0;
    }
    if total == 0 {
        return 1.0;
    }
    let bx = SignatureBox::new(kappa);
    let mut memo = vec![f64::NAN; bx.size];
    let mut sig = kappa.to_vec();
    wick_rec(&mut sig, sigma, mean, &bx, &mut memo)
}

fn wick_rec(sig: &mut [u8], sigma: &Matrix, mean: Option<&[f64]>, bx: &SignatureBox, memo: &mut [f64]) -> f64 {
    let idx = bx.index(sig);
    if !memo[idx].is_nan() {
        return memo[idx];
    }
    let Some(j) = sig.iter().position(|&k| k > 0) else {
        memo[idx] = 1.0;
        return 1.0;
    };
    sig[j] -= 1;
    let mut acc = 0.0;
    if let Some(mu) = mean {
        if mu[j] != 0.0 {
            acc += mu[j] * wick_rec(sig, sigma, mean, bx, memo);
        }
    }
    let remaining: usize = sig.iter().map(|&k| k as usize).sum();
    if mean.is_some() || remaining % 2 == 1 {
        for l in 0..sig.len() {
            if sig[l] == 0 {
                continue;
            }
            let s = sigma[(j, l)];
            if s == 0.0 {
                continue;
            }
            let mult = sig[l] as f64;
            sig[l] -= 1;
            acc += mult * s * wick_rec(sig, sigma, mean, bx, memo);
            sig[l] += 1;
        }
    }
    sig[j] += 1;
    memo[idx] = acc;
    acc
}

/// `E[∏ⱼ Xⱼ^{κⱼ}] = κ! · [a^κ] exp(½ aᵀΣa)` for centred `X ~ N(0, Σ)`, by
/// dense polynomial powers of the quadratic form truncated to the box `≤ κ`.
pub fn moment_mgf(kappa: &[u8], sigma: &Matrix) -> f64 {
    let total: usize = kappa.iter().map(|&k| k as usize).sum();
    if total % 2 == 1 {
        return 0.0;
    }
    if total == 0 {
        return 1.0;
    }
    let m = kappa.len();
    let bx = SignatureBox::new(kappa);
    // quadratic form ½ aᵀΣa as (coefficient, exponent-index offset) pairs
    let mut quad: Vec<(f64, Vec<u8>)> = Vec::new();
    for i in 0..m {
        for j in i..m {
            let c = if i == j { 0.5 * sigma[(i, i)] } else { sigma[(i, j)] };
            if c == 0.0 {
                continue;
            }
            let mut e = vec![0u8; m];
            e[i] += 1;
            e[j] += 1;
            if e.iter().zip(kappa).all(|(a, b)| a <= b) {
                quad.push((c, e));
            }
        }
    }
    let mut poly = vec![0.0; bx.size];
    poly[0] = 1.0;
    let mut digits = vec![0u8; m];
    for _ in 0..total / 2 {
        let mut next = vec![0.0; bx.size];
        for (idx, &c) in poly.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            decode(idx, kappa, &mut digits);
            for (qc, e) in &quad {
                if digits.iter().zip(e).zip(kappa).all(|((d, x), k)| d + x <= *k) {
                    let target = idx + bx.index(e);
                    next[target] += c * qc;
                }
            }
        }
        poly = next;
    }
    let mut fact = 1.0;
    for &k in kappa {
        for i in 2..=k as usize {
            fact *= i as f64;
        }
    }
    let p = total / 2;
    let mut pf = 1.0;
    for i in 2..=p {
        pf *= i as f64;
    }
    poly[bx.size - 1] * fact / pf
}

fn decode(mut idx: usize, kappa: &[u8], out: &mut [u8]) {
    for (o, &k) in out.iter_mut().zip(kappa) {
        let r = k as usize + 1;
        *o = (idx % r) as u8;
        idx /= r;
    }
}

fn hermite_expectation(psi: &SymbolicFactor, f: &VolFn, sigma: &Matrix, tol: f64) -> Result<f64> {
    let chol = Cholesky::semidefinite(sigma, 1e-12)?;
    let m = sigma.dim();
    // active whitening directions
    let cols: Vec<usize> = (0..m).filter(|&k| (0..m).any(|i| chol.lower[(i, k)] != 0.0)).collect();
    let r = cols.len();
    let mut nodes = HERMITE_START_NODES;
    let (mut prev, _) = hermite_tensor(psi, f, &chol.lower, &cols, nodes)?;
    if r == 0 {
        return Ok(prev);
    }
    loop {
        let next_nodes = nodes * 2;
        if next_nodes > HERMITE_MAX_NODES || next_nodes.saturating_pow(r as u32) > HERMITE_POINT_BUDGET {
            return Err(Error::Tolerance {
                context: format!("Gauss-Hermite in dimension {r} with {nodes} nodes"),
                tol,
                estimate: f64::NAN,
            });
        }
        let (cur, magnitude) = hermite_tensor(psi, f, &chol.lower, &cols, next_nodes)?;
        let change = (cur - prev).abs();
        // round-off of the weighted sum bounds the attainable accuracy
        let points = powi(next_nodes as f64, r as i32);
        let floor = magnitude * 16.0 * f64::EPSILON * sqrt(points);
        let scale = cur.abs().max(f64::MIN_POSITIVE);
        if change <= (tol * scale).max(floor) {
            return Ok(cur);
        }
        if next_nodes == HERMITE_MAX_NODES {
            return Err(Error::Tolerance {
                context: format!("Gauss-Hermite in dimension {r}"),
                tol,
                estimate: change / scale,
            });
        }
        prev = cur;
        nodes = next_nodes;
    }
}

/// Tensor rule value and the same sum with `|ψ|`.
fn hermite_tensor(psi: &SymbolicFactor, f: &VolFn, lower: &Matrix, cols: &[usize], n: usize) -> Result<(f64, f64)> {
    let rule = GaussRule::hermite_normal(n)?;
    let m = lower.dim();
    let r = cols.len();
    let mut counter = vec![0usize; r];
    let mut x = vec![0.0; m];
    let mut acc = 0.0;
    let mut magnitude = 0.0;
    loop {
        let mut w = 1.0;
        for i in 0..m {
            x[i] = 0.0;
        }
        for (slot, &c) in counter.iter().zip(cols) {
            let z = rule.nodes[*slot];
            w *= rule.weights[*slot];
            for i in 0..m {
                x[i] += lower[(i, c)] * z;
            }
        }
        let v = w * psi.evaluate(f, &x);
        acc += v;
        magnitude += v.abs();
        // odometer
        let mut k = 0;
        loop {
            if k == r {
                return Ok((acc, magnitude));
            }
            counter[k] += 1;
            if counter[k] < n {
                break;
            }
            counter[k] = 0;
            k += 1;
        }
    }
}

/// A differentiable path of covariance matrices.
pub trait MatrixPath {
    fn sigma(&self, t: f64) -> Matrix;
    fn d_sigma(&self, t: f64) -> Matrix;
}

/// [`MatrixPath`] from a pair of closures.
pub struct FnPath<S, D> {
    pub sigma: S,
    pub d_sigma: D,
}

impl<S: Fn(f64) -> Matrix, D: Fn(f64) -> Matrix> MatrixPath for FnPath<S, D> {
    fn sigma(&self, t: f64) -> Matrix {
        (self.sigma)(t)
    }
    fn d_sigma(&self, t: f64) -> Matrix {
        (self.d_sigma)(t)
    }
}

/// Residual of the Gaussian derivative identity
/// `d/dt E[g(X_t)] = ½ Σₖₗ ∂ₜΣₖₗ(t) E[∂ₖ∂ₗ g(X_t)]`, `X_t ~ N(0, Σ(t))`.
///
/// The left side is a Richardson-extrapolated central difference; `∂ₜΣ`
/// need not be positive semi-definite.
pub fn check_derivative_identity<P: MatrixPath>(g: &SymbolicFactor, path: &P, t: f64, f: &VolFn) -> Result<f64> {
    let method = Method::preferred(f);
    let prepared = PreparedPsi::new(g, f, method)?;
    let phi = |s: f64| prepared.expect(&path.sigma(s));
    let h = 1e-3 * t.abs().max(1.0);
    let central = |h: f64| -> Result<f64> { Ok((phi(t + h)? - phi(t - h)?) / (2.0 * h)) };
    let lhs = (4.0 * central(0.5 * h)? - central(h)?) / 3.0;

    let ds = path.d_sigma(t);
    let sigma = path.sigma(t);
    let m = g.vars;
    let mut rhs = 0.0;
    for k in 0..m {
        let gk = g.differentiate(k);
        for l in 0..m {
            if ds[(k, l)] == 0.0 {
                continue;
            }
            let gkl = gk.differentiate(l);
            let e = PreparedPsi::new(&gkl, f, method)?.expect(&sigma)?;
            rhs += 0.5 * ds[(k, l)] * e;
        }
    }
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn law(rows: &[&[f64]]) -> GaussianLaw {
        GaussianLaw::new(Matrix::from_rows(rows)).unwrap()
    }

    const LIN: VolFn = VolFn::Linear { c1: 1.0 };

    #[test]
    fn product_of_two() {
        let psi = SymbolicFactor::powers(&[1, 1]);
        let l = law(&[&[1.0, 0.5], &[0.5, 1.0]]);
        for m in [Method::Wick, Method::Analytic, Method::Hermite] {
            assert_relative_eq!(expect_psi(&psi, &l, &LIN, m).unwrap(), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn exponential_closed_form() {
        let psi = SymbolicFactor::powers(&[1, 1]);
        let l = law(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let f = VolFn::Exponential { c2: 1.0, c3: 1.0 };
        let v = expect_psi(&psi, &l, &f, Method::Analytic).unwrap();
        assert_relative_eq!(v, core::f64::consts::E, max_relative = 1e-15);
        let h = expect_psi(&psi, &l, &f, Method::Hermite).unwrap();
        assert_relative_eq!(h, v, max_relative = 1e-10);
    }

    #[test]
    fn fourth_order_pairing() {
        let (s11, s12, s22) = (1.3, -0.4, 0.7);
        let psi = SymbolicFactor::powers(&[2, 2]);
        let l = law(&[&[s11, s12], &[s12, s22]]);
        let want = s11 * s22 + 2.0 * s12 * s12;
        assert_relative_eq!(expect_psi(&psi, &l, &LIN, Method::Wick).unwrap(), want, max_relative = 1e-14);
        assert_relative_eq!(expect_psi(&psi, &l, &LIN, Method::Analytic).unwrap(), want, max_relative = 1e-14);
    }

    #[test]
    fn gaussian_moments_with_mean() {
        // E[(μ+σZ)^3] = μ³ + 3μσ²
        let s = Matrix::from_rows(&[&[2.0]]);
        assert_relative_eq!(moment_wick(&[3], &s, Some(&[0.5])), 0.125 + 3.0 * 0.5 * 2.0);
        assert_relative_eq!(moment_wick(&[4], &s, None), 12.0);
        assert_eq!(moment_wick(&[3], &s, None), 0.0);
    }

    #[test]
    fn derivative_structure_for_linear() {
        // f f'' vanishes for linear f; f'^2 = c1^2
        let psi = SymbolicFactor::from_terms(
            1,
            vec![(1.0, Monomial::new(vec![vec![0, 2]])), (2.0, Monomial::new(vec![vec![1, 1]]))],
        );
        let l = law(&[&[0.3]]);
        let f = VolFn::Linear { c1: 3.0 };
        assert_relative_eq!(expect_psi(&psi, &l, &f, Method::Wick).unwrap(), 18.0);
    }

    #[test]
    fn unsupported_combinations() {
        let psi = SymbolicFactor::powers(&[1]);
        let l = law(&[&[1.0]]);
        assert!(matches!(
            expect_psi(&psi, &l, &VolFn::ShiftedTanh, Method::Analytic),
            Err(Error::Unsupported { .. })
        ));
        assert!(expect_psi(&psi, &l, &VolFn::Exponential { c2: 1.0, c3: 1.0 }, Method::Wick).is_err());
        let nine = SymbolicFactor::powers(&[1; 9]);
        let big = GaussianLaw::new(Matrix::identity(9)).unwrap();
        assert!(matches!(
            expect_psi(&nine, &big, &VolFn::ShiftedTanh, Method::Hermite),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tanh_derivatives_match_finite_differences() {
        let f = VolFn::ShiftedTanh;
        for d in 0..5u8 {
            for &x in &[-1.3, 0.0, 0.4, 2.0] {
                let h = 1e-5;
                let fd = (f.derivative(d, x + h) - f.derivative(d, x - h)) / (2.0 * h);
                assert!((fd - f.derivative(d + 1, x)).abs() < 1e-7, "d={d} x={x}");
            }
        }
    }

    #[test]
    fn product_rule_merges_equal_slots() {
        // ∂ (f f) = 2 f f'
        let m = Monomial::new(vec![vec![0, 0]]);
        let d = m.differentiate(0);
        assert_eq!(d, vec![(2.0, Monomial::new(vec![vec![0, 1]]))]);
    }

    #[test]
    fn semidefinite_law_with_pinned_variable() {
        // X₂ ≡ 0 (e.g. Ŵ₀): E[X₁² X₂⁰] only
        let l = law(&[&[2.0, 0.0], &[0.0, 0.0]]);
        let psi = SymbolicFactor::powers(&[2, 0]);
        let f = VolFn::ShiftedTanh;
        let h = PreparedPsi::with_tol(&psi, &f, Method::Hermite, 1e-4).unwrap().expect(&l.sigma).unwrap();
        assert!(h.is_finite() && h > 0.0);
        let lin = expect_psi(&psi, &l, &LIN, Method::Hermite).unwrap();
        assert_relative_eq!(lin, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn derivative_identity_examples() {
        let lin = LIN;
        let scalar = FnPath {
            sigma: |t: f64| Matrix::from_rows(&[&[t]]),
            d_sigma: |_t: f64| Matrix::from_rows(&[&[1.0]]),
        };
        let r4 = check_derivative_identity(&SymbolicFactor::powers(&[4]), &scalar, 1.0, &lin).unwrap();
        assert!(r4 < 1e-6, "{r4}");
        let r2 = check_derivative_identity(&SymbolicFactor::powers(&[2]), &scalar, 1.0, &lin).unwrap();
        assert!(r2 < 1e-8, "{r2}");
        // Brownian bridge read at times t·u: Σ = t·min(u) − t²·uuᵀ, ∂Σ indefinite at t=0.8
        let u: [f64; 2] = [0.5, 1.0];
        let bridge = FnPath {
            sigma: move |t: f64| Matrix::from_fn(2, |k, l| t * u[k].min(u[l]) - t * t * u[k] * u[l]),
            d_sigma: move |t: f64| Matrix::from_fn(2, |k, l| u[k].min(u[l]) - 2.0 * t * u[k] * u[l]),
        };
        let ds = bridge.d_sigma(0.8);
        assert!(ds[(0, 0)] * ds[(1, 1)] - ds[(0, 1)] * ds[(1, 0)] < 0.0, "∂Σ should be indefinite");
        let r = check_derivative_identity(&SymbolicFactor::powers(&[1, 1]), &bridge, 0.8, &lin).unwrap();
        assert!(r < 1e-6, "{r}");
    }
}
