//! Constants of the lower bound `E_{n,3} ≳ (C₂ − C₃) n^{−3H−1/2}` for
//! `f(x) = x`, `ρ = 1`, `Φ(x) = x³` and `H < 1/6`.
//!
//! With `a = H − 1/2`:
//!
//! ```text
//! B₁ = −∫₀^∞ v^a (v^a − (v−1)₊^a) dv
//! B₂ =  ∫₀^∞ v^a (v^{2H} − (v+1)^{2H}) dv
//! B₃ =  a ∫₀^∞ v^a (1+v)^{H−3/2} dv
//! C₂ = B₁B₂ / (3H + 3/2)
//! C₃ = −B₃ · ½ (2^{3H−1/2}/(1/2 − 3H) + 2/(1 − 2H))
//! ```
//!
//! Each integral is evaluated directly (closed-form pieces near the origin,
//! Gauss–Jacobi at the integrable endpoint singularities, and the tail beyond
//! `V` summed from its convergent binomial series in `1/v`), and also from
//! Beta-function identities.

use alloc::format;
use alloc::vec::Vec;

use crate::gaussian::VolFn;
use crate::kernel::HurstParam;
use crate::math::powf;
use crate::moments::{continuous_moment, weak_error_against, ModelSpec};
use crate::parallel::map_ordered;
use crate::quadrature::GaussRule;
use crate::special::beta;
use crate::{Error, Result};

pub const ONE_SIXTH: f64 = 1.0 / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConstantMethod {
    Integral,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LowerBoundConstants {
    pub hurst: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub c2: f64,
    pub c3: f64,
    pub method: ConstantMethod,
}

impl LowerBoundConstants {
    pub fn from_b(hurst: f64, (b1, b2, b3): (f64, f64, f64), method: ConstantMethod) -> Self {
        LowerBoundConstants { hurst, b1, b2, b3, c2: c2_from(hurst, b1, b2), c3: c3_from(hurst, b3), method }
    }

    pub fn beta(hurst: f64) -> Result<Self> {
        Ok(Self::from_b(hurst, b_constants_beta(hurst)?, ConstantMethod::Beta))
    }

    pub fn integral(hurst: f64, tol: f64) -> Result<Self> {
        Ok(Self::from_b(hurst, b_constants_integral(hurst, tol)?, ConstantMethod::Integral))
    }

    pub fn difference(&self) -> f64 {
        self.c2 - self.c3
    }
}

fn check_rough(h: f64) -> Result<()> {
    if !(h > 0.0 && h < ONE_SIXTH) {
        return Err(Error::Precondition(format!("lower-bound constants need 0 < H < 1/6 (got {h})")));
    }
    Ok(())
}

fn c2_from(h: f64, b1: f64, b2: f64) -> f64 {
    b1 * b2 / (3.0 * h + 1.5)
}

fn c3_from(h: f64, b3: f64) -> f64 {
    -b3 * 0.5 * (powf(2.0, 3.0 * h - 0.5) / (0.5 - 3.0 * h) + 2.0 / (1.0 - 2.0 * h))
}

/// The same `C₃` with the factor ½ distributed:
/// `−B₃ (2^{3H−3/2}/(1/2−3H) + 1/(1−2H))`.
pub fn c3_distributed(h: f64, b3: f64) -> f64 {
    -b3 * (powf(2.0, 3.0 * h - 1.5) / (0.5 - 3.0 * h) + 1.0 / (1.0 - 2.0 * h))
}

/// `(B₁, B₂, B₃)` from `2^{−1−2H}B(H+½, −H)`, `−B(−3H−½, ½+H)` and
/// `(H−½)B(1−2H, H+½)`; negative arguments go through the reflection formula
/// with explicit sign tracking.
pub fn b_constants_beta(h: f64) -> Result<(f64, f64, f64)> {
    check_rough(h)?;
    let b1 = powf(2.0, -1.0 - 2.0 * h) * beta(h + 0.5, -h)?;
    let b2 = -beta(-3.0 * h - 0.5, 0.5 + h)?;
    let b3 = b3_beta(h)?;
    Ok((b1, b2, b3))
}

/// `(H−½)B(1−2H, H+½)`, defined on all of `(0, 1/2)`.
pub fn b3_beta(h: f64) -> Result<f64> {
    HurstParam::new(h)?;
    Ok((h - 0.5) * beta(1.0 - 2.0 * h, h + 0.5)?)
}

/// `C₂` and `C₃` from the Beta forms.
pub fn c2_c3(h: f64) -> Result<(f64, f64)> {
    let c = LowerBoundConstants::beta(h)?;
    Ok((c.c2, c.c3))
}

const TAIL_START: f64 = 4.0;
const MAX_SERIES_TERMS: usize = 400;

/// `Σ_{k≥k0} coef_k · ∫_V^∞ v^{p−k} dv` where `coef_k` are the binomial
/// coefficients of `(1 + s/v)^e` (sign `s` = ±1), i.e. the tail of
/// `∫_V^∞ v^p (1 + s/v)^e dv` with the first `k0` terms removed.
fn binomial_tail(p: f64, e: f64, s: f64, k0: usize, v: f64, tol: f64) -> Result<f64> {
    let mut coef = 1.0;
    let mut acc = 0.0;
    for k in 0..MAX_SERIES_TERMS {
        if k > 0 {
            coef *= (e - (k as f64 - 1.0)) / k as f64 * s;
        }
        if k < k0 {
            continue;
        }
        let q = p - k as f64 + 1.0;
        if q >= 0.0 {
            return Err(Error::Precondition(format!("divergent tail: exponent {} at term {k}", q - 1.0)));
        }
        let term = coef * powf(v, q) / -q;
        acc += term;
        if term.abs() <= 1e-3 * tol * acc.abs().max(1e-300) && k > k0 + 2 {
            return Ok(acc);
        }
    }
    Err(Error::Tolerance { context: "binomial tail series".into(), tol, estimate: f64::NAN })
}

/// Two Gauss rules of different order on the same interval; returns the
/// finer value and fails when they disagree by more than `tol`.
fn checked<F: Fn(&GaussRule) -> f64>(coarse: &GaussRule, fine: &GaussRule, tol: f64, what: &str, f: F) -> Result<f64> {
    let a = f(coarse);
    let b = f(fine);
    if (a - b).abs() > tol {
        return Err(Error::Tolerance { context: what.into(), tol, estimate: (a - b).abs() });
    }
    Ok(b)
}

/// Composite Legendre on geometric panels `[lo, 2lo, 4lo, …, hi]`.
fn smooth_panels(rule: &GaussRule, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut a = lo;
    while a < hi {
        let b = (2.0 * a).min(hi);
        acc += rule.integrate(a, b, &f);
        a = b;
    }
    acc
}

/// `B₁` by direct integration, valid on `(0, 1/2)`.
pub fn b1_integral(h: f64, tol: f64) -> Result<f64> {
    HurstParam::new(h)?;
    let a = h - 0.5;
    // ∫₀¹ v^{2a} = 1/(2H)
    let head = 1.0 / (2.0 * h);
    // ∫₁^V v^a (v−1)^a: Jacobi weight (v−1)^a on [1, 2], smooth beyond
    let jc = GaussRule::jacobi(20, 0.0, a)?;
    let jf = GaussRule::jacobi(30, 0.0, a)?;
    let near = checked(&jc, &jf, 0.1 * tol, "B1 near v = 1", |r| {
        r.nodes.iter().zip(&r.weights).map(|(x, w)| w * powf(1.5 + 0.5 * x, a)).sum::<f64>() * powf(0.5, a + 1.0)
    })?;
    let (lc, lf) = (GaussRule::legendre(20), GaussRule::legendre(30));
    let mid = checked(&lc, &lf, 0.1 * tol, "B1 middle", |r| {
        smooth_panels(r, 2.0, TAIL_START, |v| powf(v, a) * powf(v - 1.0, a))
    })?;
    let cross = near + mid;
    // ∫₁^V v^{2a} in closed form
    let diag = (powf(TAIL_START, 2.0 * a + 1.0) - 1.0) / (2.0 * a + 1.0);
    // ∫_V^∞ v^{2a}(1 − (1 − 1/v)^a) dv
    let tail = -binomial_tail(2.0 * a, a, -1.0, 1, TAIL_START, tol)?;
    Ok(-(head + diag - cross + tail))
}

/// `B₂` by direct integration; the integral diverges for `H ≥ 1/6`.
pub fn b2_integral(h: f64, tol: f64) -> Result<f64> {
    check_rough(h)?;
    let a = h - 0.5;
    let e = 2.0 * h;
    // ∫₀¹ v^{a+2H}
    let head_pow = 1.0 / (3.0 * h + 0.5);
    // ∫₀¹ v^a (1+v)^{2H}: Jacobi weight v^a
    let jc = GaussRule::jacobi(20, 0.0, a)?;
    let jf = GaussRule::jacobi(30, 0.0, a)?;
    let head_mix = checked(&jc, &jf, 0.1 * tol, "B2 near v = 0", |r| {
        r.nodes.iter().zip(&r.weights).map(|(x, w)| w * powf(1.0 + 0.5 * (1.0 + x), e)).sum::<f64>() * powf(0.5, a + 1.0)
    })?;
    let (lc, lf) = (GaussRule::legendre(20), GaussRule::legendre(30));
    let mid = checked(&lc, &lf, 0.1 * tol, "B2 middle", |r| {
        smooth_panels(r, 1.0, TAIL_START, |v| powf(v, a) * (powf(v, e) - powf(v + 1.0, e)))
    })?;
    // v^a (v^{2H} − (v+1)^{2H}) = −v^{a+2H} Σ_{k≥1} binom(2H, k) v^{−k}
    let tail = -binomial_tail(a + e, e, 1.0, 1, TAIL_START, tol)?;
    Ok(head_pow - head_mix + mid + tail)
}

/// `B₃` by direct integration, valid on `(0, 1/2)`.
pub fn b3_integral(h: f64, tol: f64) -> Result<f64> {
    HurstParam::new(h)?;
    let a = h - 0.5;
    let e = h - 1.5;
    let jc = GaussRule::jacobi(20, 0.0, a)?;
    let jf = GaussRule::jacobi(30, 0.0, a)?;
    let head = checked(&jc, &jf, 0.1 * tol, "B3 near v = 0", |r| {
        r.nodes.iter().zip(&r.weights).map(|(x, w)| w * powf(1.0 + 0.5 * (1.0 + x), e)).sum::<f64>() * powf(0.5, a + 1.0)
    })?;
    let (lc, lf) = (GaussRule::legendre(20), GaussRule::legendre(30));
    let mid = checked(&lc, &lf, 0.1 * tol, "B3 middle", |r| {
        smooth_panels(r, 1.0, TAIL_START, |v| powf(v, a) * powf(1.0 + v, e))
    })?;
    // v^a (1+v)^e = v^{a+e} (1 + 1/v)^e
    let tail = binomial_tail(a + e, e, 1.0, 0, TAIL_START, tol)?;
    Ok(a * (head + mid + tail))
}

/// `(B₁, B₂, B₃)` by direct integration.
pub fn b_constants_integral(h: f64, tol: f64) -> Result<(f64, f64, f64)> {
    check_rough(h)?;
    Ok((b1_integral(h, tol)?, b2_integral(h, tol)?, b3_integral(h, tol)?))
}

/// One row of the `C₂ − C₃` sweep, with both evaluation routes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConstantsRow {
    pub beta: LowerBoundConstants,
    pub integral: LowerBoundConstants,
}

impl ConstantsRow {
    /// Largest absolute disagreement over `B₁, B₂, B₃`.
    pub fn max_gap(&self) -> f64 {
        let (b, i) = (&self.beta, &self.integral);
        (b.b1 - i.b1).abs().max((b.b2 - i.b2).abs()).max((b.b3 - i.b3).abs())
    }
}

/// `points` equally spaced values of `H` from `lo` to `hi` inclusive.
pub fn constants_sweep(lo: f64, hi: f64, points: usize, tol: f64) -> Result<Vec<ConstantsRow>> {
    if points < 2 || !(lo < hi) {
        return Err(Error::invalid("sweep needs lo < hi and at least 2 points"));
    }
    let hs: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    map_ordered(&hs, |&h| {
        Ok(ConstantsRow { beta: LowerBoundConstants::beta(h)?, integral: LowerBoundConstants::integral(h, tol)? })
    })
    .into_iter()
    .collect()
}

/// Rescaled weak errors `n^{3H+1/2} E_{n,3}` for `f(x) = x`, `ρ = 1`, `T = 1`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LowerBoundCurve {
    pub hurst: f64,
    /// `(n, E_{n,3}, n^{3H+1/2} E_{n,3})`
    pub points: Vec<(usize, f64, f64)>,
    /// Minimum of the rescaled errors over `n ≥ 64` (all points if none).
    pub window_min: f64,
    pub constants: LowerBoundConstants,
    /// `6 (C₂ − C₃)`, the constants on the scale of `E[X³] = 6 ∫∫ C K`;
    /// reported next to the curve, not asserted against it.
    pub scaled_difference: f64,
}

pub fn empirical_lower_bound(h: f64, n_list: &[usize], tol: f64) -> Result<LowerBoundCurve> {
    check_rough(h)?;
    if n_list.is_empty() {
        return Err(Error::invalid("empty n list"));
    }
    let model = ModelSpec::new(h, 1.0, 1.0, VolFn::Linear { c1: 1.0 })?;
    let continuous = continuous_moment(&model, 3, tol)?;
    let rate = 3.0 * h + 0.5;
    let errors = map_ordered(n_list, |&n| weak_error_against(&model, &continuous, n, tol));
    let mut points = Vec::with_capacity(n_list.len());
    for (n, e) in n_list.iter().zip(errors) {
        let e = e?.error;
        points.push((*n, e, e * powf(*n as f64, rate)));
    }
    let in_window: Vec<f64> = points.iter().filter(|p| p.0 >= 64).map(|p| p.2).collect();
    let pool: Vec<f64> = if in_window.is_empty() { points.iter().map(|p| p.2).collect() } else { in_window };
    let window_min = pool.iter().copied().fold(f64::INFINITY, f64::min);
    let constants = LowerBoundConstants::beta(h)?;
    Ok(LowerBoundCurve { hurst: h, points, window_min, constants, scaled_difference: 6.0 * constants.difference() })
}
