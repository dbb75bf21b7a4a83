//! Liouville kernel `K(t,s) = (t−s)^{H−1/2}`, its grid-frozen version
//! `K̃(t,s) = K(η(t),s)`, and the covariance of `Ŵ_t = ∫₀ᵗ K(t,s) dW_s`.

use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math::{floor, powf};
use crate::quadrature::GaussRule;
use crate::special::gamma;
use crate::{Error, Result};

/// Hurst exponent in the rough regime `(0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "f64", into = "f64"))]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h <= 0.5 {
            Ok(HurstParam(h))
        } else {
            Err(Error::invalid(alloc::format!("Hurst parameter {h} outside (0, 1/2]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `H − 1/2`, the kernel exponent.
    pub fn kernel_exponent(self) -> f64 {
        self.0 - 0.5
    }

    pub fn is_brownian(self) -> bool {
        self.0 == 0.5
    }
}

impl TryFrom<f64> for HurstParam {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        HurstParam::new(h)
    }
}

impl From<HurstParam> for f64 {
    fn from(h: HurstParam) -> f64 {
        h.0
    }
}

/// Uniform grid `i/n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub n: usize,
    pub horizon: f64,
}

impl GridSpec {
    pub fn new(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("grid needs n >= 1"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon must be positive"));
        }
        Ok(GridSpec { n, horizon })
    }

    /// `⌊nT⌋`.
    pub fn full_steps(&self) -> usize {
        grid_index(self.horizon, self.n)
    }

    pub fn point(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    /// True when `nT` is an integer, i.e. `T` is itself a grid point.
    pub fn is_aligned(&self) -> bool {
        self.point(self.full_steps()) >= self.horizon
    }

    /// Right endpoints of the scheme's intervals: `1/n, 2/n, …, ⌊nT⌋/n`
    /// followed by `T` when `nT` is not an integer.
    pub fn right_endpoints(&self) -> Vec<f64> {
        let m = self.full_steps();
        let mut out: Vec<f64> = (1..=m).map(|i| self.point(i)).collect();
        if !self.is_aligned() {
            out.push(self.horizon);
        }
        out
    }

    /// Number of scheme intervals (full steps plus a trailing partial step).
    pub fn intervals(&self) -> usize {
        self.full_steps() + usize::from(!self.is_aligned())
    }
}

/// `⌊n t⌋`, corrected so that `i/n` computed in floating point maps back to `i`.
pub fn grid_index(t: f64, n: usize) -> usize {
    if t <= 0.0 {
        return 0;
    }
    let nf = n as f64;
    let mut k = floor(t * nf);
    if (k + 1.0) / nf <= t {
        k += 1.0;
    } else if k / nf > t {
        k -= 1.0;
    }
    k.max(0.0) as usize
}

/// `η(t) = ⌊nt⌋/n`.
pub fn eta(t: f64, n: usize) -> f64 {
    grid_index(t, n) as f64 / n as f64
}

/// `(t−s)^{H−1/2}` for `t > s`, else 0.
pub fn liouville_k(t: f64, s: f64, h: HurstParam) -> f64 {
    if t > s {
        let a = h.kernel_exponent();
        if a == 0.0 {
            1.0
        } else {
            powf(t - s, a)
        }
    } else {
        0.0
    }
}

/// `K(η(t), s)`.
pub fn discrete_k(t: f64, s: f64, h: HurstParam, n: usize) -> f64 {
    liouville_k(eta(t, n), s, h)
}

/// `∫_a^b K(t, s) ds` in closed form.
pub fn integrated_k(t: f64, a: f64, b: f64, h: HurstParam) -> f64 {
    debug_assert!(a <= b);
    let e = h.value() + 0.5;
    let lo = if t > a { powf(t - a, e) } else { 0.0 };
    let hi = if t > b { powf(t - b, e) } else { 0.0 };
    (lo - hi) / e
}

/// Evaluator for `C(t,s) = E[Ŵ_t Ŵ_s]`.
///
/// For `s < t` and `x = s/t`,
///
/// ```text
/// C = s^{H+1/2} t^{H−1/2} ₂F₁(1/2−H, 1; H+3/2; x) / (H+1/2)                x ≤ 1/2
/// C = (s^{H+1/2} t^{H−1/2} S(1−x) − κ (t−s)^{2H}) / (2H)                   x > 1/2
/// S(z) = Σ_k (1/2−H)_k / (1−2H)_k z^k,   κ = Γ(H+1/2) Γ(2−2H) / (2 Γ(3/2−H))
/// ```
///
/// so both series converge at least like `2^{−k}`. [`Covariance::eval_quadrature`]
/// computes the same integral `∫₀ᵘ v^{H−1/2} (ε+v)^{H−1/2} dv` (`ε = |t−s|`,
/// `u = min(t,s)`) numerically: a Gauss–Jacobi weight carries the endpoint
/// factor on `[0, min(u, ε)]` and geometric Legendre panels cover the rest.
#[derive(Debug, Clone)]
pub struct Covariance {
    h: HurstParam,
    kappa: f64,
    jacobi: GaussRule,
    legendre: GaussRule,
}

const PANEL_GROWTH: f64 = 4.0;
const SERIES_MAX_TERMS: usize = 200;

impl Covariance {
    pub fn new(h: HurstParam) -> Self {
        Self::with_nodes(h, 16)
    }

    /// Quadrature order used by [`Covariance::eval_quadrature`].
    pub fn with_nodes(h: HurstParam, nodes: usize) -> Self {
        let a = h.kernel_exponent();
        let jacobi = GaussRule::jacobi(nodes, 0.0, a).expect("exponent above -1");
        let v = h.value();
        let kappa = if h.is_brownian() {
            0.5
        } else {
            let num = gamma(v + 0.5).and_then(|g| gamma(2.0 - 2.0 * v).map(|q| g * q));
            let den = gamma(1.5 - v);
            match (num, den) {
                (Ok(n), Ok(d)) => n / (2.0 * d),
                _ => f64::NAN,
            }
        };
        Covariance { h, kappa, jacobi, legendre: GaussRule::legendre(nodes) }
    }

    pub fn hurst(&self) -> HurstParam {
        self.h
    }

    /// `C(t,t) = t^{2H}/(2H)`.
    pub fn variance(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let h = self.h.value();
        powf(t, 2.0 * h) / (2.0 * h)
    }

    fn ordered(t: f64, s: f64) -> (f64, f64) {
        if s <= t {
            (s, t)
        } else {
            (t, s)
        }
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        let (lo, hi) = Self::ordered(t, s);
        if lo <= 0.0 {
            return 0.0;
        }
        if lo == hi {
            return self.variance(lo);
        }
        if self.h.is_brownian() {
            return lo;
        }
        let h = self.h.value();
        let x = lo / hi;
        let prefactor = powf(lo, h + 0.5) * powf(hi, h - 0.5);
        if x <= 0.5 {
            // (1/2−H)_k / (H+3/2)_k
            let (p, q) = (0.5 - h, h + 1.5);
            prefactor * series(|k| (p + k) / (q + k), x) / (h + 0.5)
        } else {
            let (p, q) = (0.5 - h, 1.0 - 2.0 * h);
            let s = series(|k| (p + k) / (q + k), 1.0 - x);
            (prefactor * s - self.kappa * powf(hi - lo, 2.0 * h)) / (2.0 * h)
        }
    }

    /// `C(t,s)` by quadrature.
    pub fn eval_quadrature(&self, t: f64, s: f64) -> f64 {
        let (lo, hi) = Self::ordered(t, s);
        if lo <= 0.0 {
            return 0.0;
        }
        if lo == hi {
            return self.variance(lo);
        }
        if self.h.is_brownian() {
            return lo;
        }
        let a = self.h.kernel_exponent();
        let eps = hi - lo;
        // Jacobi panel [0, first]
        let first = lo.min(eps);
        let half = 0.5 * first;
        let mut acc = 0.0;
        for (x, w) in self.jacobi.nodes.iter().zip(&self.jacobi.weights) {
            let v = half * (1.0 + x);
            acc += w * powf(eps + v, a);
        }
        acc *= powf(half, a + 1.0);
        let mut left = first;
        while left < lo {
            let right = (left * PANEL_GROWTH).min(lo);
            let c = 0.5 * (left + right);
            let hw = 0.5 * (right - left);
            let mut panel = 0.0;
            for (x, w) in self.legendre.nodes.iter().zip(&self.legendre.weights) {
                let v = c + hw * x;
                panel += w * powf(v * (eps + v), a);
            }
            acc += panel * hw;
            left = right;
        }
        acc
    }
}

/// `Σ_k c_k z^k` with `c_0 = 1`, `c_{k+1} = c_k · ratio(k)`.
fn series(ratio: impl Fn(f64) -> f64, z: f64) -> f64 {
    let mut term = 1.0;
    let mut acc = 1.0;
    for k in 0..SERIES_MAX_TERMS {
        term *= ratio(k as f64) * z;
        acc += term;
        if term.abs() <= 1e-17 * acc.abs() {
            break;
        }
    }
    acc
}

/// `C(t,s)` cross-checked against quadrature; fails when the two differ by
/// more than `tol` (relative to `max(1, |C|)`).
pub fn covariance_c(t: f64, s: f64, h: HurstParam, tol: f64) -> Result<f64> {
    let cov = Covariance::with_nodes(h, 24);
    let closed = cov.eval(t, s);
    let est = (closed - cov.eval_quadrature(t, s)).abs();
    if est > tol * closed.abs().max(1.0) {
        return Err(Error::Tolerance {
            context: alloc::format!("covariance C({t}, {s})"),
            tol,
            estimate: est,
        });
    }
    Ok(closed)
}

/// Joint covariance of `(Ŵ_{r₁}, …, Ŵ_{r_K}, ΔW₁, …, ΔW_K)` where `r_j` are
/// the scheme's interval right endpoints and `ΔW_j = W_{r_j} − W_{r_{j−1}}`.
#[derive(Debug, Clone)]
pub struct JointGridCovariance {
    pub grid: GridSpec,
    pub endpoints: Vec<f64>,
    pub matrix: Matrix,
}

impl JointGridCovariance {
    pub fn intervals(&self) -> usize {
        self.endpoints.len()
    }
}

pub fn joint_grid_covariance(grid: GridSpec, h: HurstParam) -> JointGridCovariance {
    let ends = grid.right_endpoints();
    let k = ends.len();
    let cov = Covariance::new(h);
    let rows = crate::parallel::map_range(k, |i| {
        let mut row = alloc::vec![0.0; 2 * k];
        for j in 0..k {
            row[j] = cov.eval(ends[i], ends[j]);
            let left = if j == 0 { 0.0 } else { ends[j - 1] };
            row[k + j] = integrated_k(ends[i], left, ends[j], h);
        }
        row
    });
    let mut m = Matrix::zeros(2 * k);
    for i in 0..k {
        for j in 0..2 * k {
            m[(i, j)] = rows[i][j];
            m[(j, i)] = rows[i][j];
        }
        let left = if i == 0 { 0.0 } else { ends[i - 1] };
        m[(k + i, k + i)] = ends[i] - left;
    }
    JointGridCovariance { grid, endpoints: ends, matrix: m }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hp(h: f64) -> HurstParam {
        HurstParam::new(h).unwrap()
    }

    /// Midpoint Riemann sum of the covariance integral after the change of
    /// variables `s − u = w^{1/(H+1/2)}`, which leaves the bounded integrand
    /// `(t − s + w^{1/(H+1/2)})^{H−1/2} / (H+1/2)` on `[0, s^{H+1/2}]`.
    fn riemann_cov(t: f64, s: f64, h: f64, panels: usize) -> f64 {
        let a = h - 0.5;
        let p = 1.0 / (h + 0.5);
        let upper = powf(s, h + 0.5);
        let dw = upper / panels as f64;
        (0..panels)
            .map(|i| {
                let w = (i as f64 + 0.5) * dw;
                powf(t - s + powf(w, p), a)
            })
            .sum::<f64>()
            * dw
            * p
    }

    #[test]
    fn hurst_range() {
        assert!(HurstParam::new(0.0).is_err());
        assert!(HurstParam::new(0.51).is_err());
        assert!(HurstParam::new(0.5).is_ok());
        assert!(HurstParam::new(1e-3).is_ok());
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(liouville_k(1.0, 0.5, hp(0.5)), 1.0);
        assert_eq!(liouville_k(0.5, 1.0, hp(0.3)), 0.0);
        assert_eq!(liouville_k(1.0, 0.0, hp(0.1)), 1.0);
        assert_eq!(liouville_k(2.0, 1.0, hp(0.1)), 1.0);
        assert_eq!(liouville_k(1.0, 1.0, hp(0.1)), 0.0);
    }

    #[test]
    fn eta_examples() {
        assert_relative_eq!(eta(0.37, 10), 0.3);
        assert_eq!(eta(1.0, 10), 1.0);
        assert_eq!(eta(0.0, 7), 0.0);
        // floating-point grid points map to themselves
        for n in [3usize, 7, 10, 100, 1000] {
            for i in 0..=n {
                let t = i as f64 / n as f64;
                assert_eq!(grid_index(t, n), i, "n={n} i={i}");
                assert_eq!(eta(t, n), t);
            }
        }
        assert_eq!(grid_index(0.29, 100), 29);
        assert_eq!(grid_index(0.7, 10), 7);
    }

    #[test]
    fn discrete_kernel_examples() {
        assert_eq!(discrete_k(0.95, 0.92, hp(0.3), 10), 0.0);
        assert_eq!(discrete_k(0.95, 0.4, hp(0.5), 10), 1.0);
        assert_relative_eq!(discrete_k(1.0, 0.5, hp(0.1), 4), powf(0.5, -0.4), max_relative = 1e-15);
        assert_relative_eq!(discrete_k(1.0, 0.5, hp(0.1), 4), 1.31951, max_relative = 1e-5);
    }

    #[test]
    fn integrated_kernel_examples() {
        assert_relative_eq!(integrated_k(1.0, 0.0, 1.0, hp(0.5)), 1.0);
        assert_relative_eq!(integrated_k(1.0, 0.0, 1.0, hp(0.1)), 1.0 / 0.6, max_relative = 1e-15);
        assert_eq!(integrated_k(0.5, 0.5, 1.0, hp(0.3)), 0.0);
    }

    #[test]
    fn covariance_examples() {
        let c = Covariance::new(hp(0.25));
        assert_relative_eq!(c.eval(1.0, 1.0), 2.0, max_relative = 1e-15);
        assert_eq!(Covariance::new(hp(0.5)).eval(1.0, 0.5), 0.5);
        // Riemann-sum oracle; its own error at 10⁶ panels is ~1e−9 here
        let oracle = riemann_cov(1.0, 0.3, 0.1, 1_000_000);
        let got = covariance_c(1.0, 0.3, hp(0.1), 1e-12).unwrap();
        assert!((got - oracle).abs() < 1e-7, "{got} vs {oracle}");
    }

    #[test]
    fn covariance_matches_brownian_formula_through_quadrature_path() {
        // H = 1/2 short-circuits; H slightly below exercises the quadrature
        let c = Covariance::new(hp(0.4999999));
        assert!((c.eval_quadrature(0.8, 0.3) - 0.3).abs() < 1e-6);
        assert!((c.eval(0.8, 0.3) - 0.3).abs() < 1e-6);
    }

    #[test]
    fn covariance_symmetric_and_near_diagonal() {
        let c = Covariance::new(hp(0.07));
        for &(t, s) in &[(1.0, 0.999_999), (0.5, 0.2), (2.0, 1e-6), (0.3, 0.2999)] {
            assert_eq!(c.eval(t, s), c.eval(s, t));
            assert_eq!(c.eval_quadrature(t, s), c.eval_quadrature(s, t));
            let fine = Covariance::with_nodes(hp(0.07), 30).eval_quadrature(t, s);
            assert!((c.eval_quadrature(t, s) - fine).abs() < 1e-13 * fine.max(1.0), "({t},{s})");
        }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for &h in &[0.01, 0.07, 0.1, 0.25, 0.4, 0.49, 0.4999] {
            let c = Covariance::with_nodes(hp(h), 30);
            for &(t, s) in &[(1.0, 0.999_999), (1.0, 0.51), (1.0, 0.5), (1.0, 0.49), (0.5, 0.2), (2.0, 1e-6), (3.0, 2.7)] {
                let q = c.eval_quadrature(t, s);
                let e = c.eval(t, s);
                assert!((q - e).abs() < 1e-12 * q.max(1.0), "H={h} ({t},{s}): {e} vs {q}");
            }
        }
    }

    #[test]
    fn joint_grid_blocks() {
        let grid = GridSpec::new(4, 1.0).unwrap();
        let j = joint_grid_covariance(grid, hp(0.5));
        let k = j.intervals();
        assert_eq!(k, 4);
        for a in 0..k {
            for b in 0..k {
                let ta = j.endpoints[a];
                let tb = j.endpoints[b];
                assert!((j.matrix[(a, b)] - ta.min(tb)).abs() < 1e-15);
                let want = if a == b { 0.25 } else { 0.0 };
                assert_eq!(j.matrix[(k + a, k + b)], want);
            }
        }
        let rough = joint_grid_covariance(grid, hp(0.1));
        // Cov(Ŵ₁, W_{0.25} − W₀) against a Riemann sum of ∫₀^{.25} (1−s)^{−0.4} ds
        let panels = 2_000_000;
        let ds = 0.25 / panels as f64;
        let oracle: f64 = (0..panels).map(|i| powf(1.0 - (i as f64 + 0.5) * ds, -0.4)).sum::<f64>() * ds;
        assert!((rough.matrix[(3, 4)] - oracle).abs() < 1e-8);
        assert!(rough.matrix.is_symmetric(0.0));
    }

    #[test]
    fn partial_last_step() {
        let grid = GridSpec::new(4, 1.1).unwrap();
        assert_eq!(grid.full_steps(), 4);
        assert!(!grid.is_aligned());
        assert_eq!(grid.intervals(), 5);
        assert_eq!(*grid.right_endpoints().last().unwrap(), 1.1);
        let aligned = GridSpec::new(10, 0.3).unwrap();
        assert!(aligned.is_aligned());
        assert_eq!(aligned.intervals(), 3);
    }
}
