//! Gamma and Beta functions on the whole real line (away from poles).
//!
//! Negative arguments go through the reflection formula with the sign of
//! Γ tracked separately from log|Γ|.

use core::f64::consts::PI;

use crate::math::{floor, ln, sin};
use crate::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

// Stirling series coefficients B_{2k} / (2k (2k-1)).
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

fn ln_gamma_positive(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    // shift into the asymptotic regime
    let mut z = x;
    let mut shift = 0.0;
    while z < 15.0 {
        shift += ln(z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv;
    for c in STIRLING {
        series += c * pow;
        pow *= inv2;
    }
    (z - 0.5) * ln(z) - z + LN_SQRT_2PI + series - shift
}

/// Returns `(ln|Γ(x)|, sign Γ(x))`. Errors at the poles `x ∈ {0, −1, −2, …}`.
pub fn ln_gamma_signed(x: f64) -> Result<(f64, f64)> {
    if !x.is_finite() {
        return Err(Error::invalid("non-finite Gamma argument"));
    }
    if x > 0.0 {
        return Ok((ln_gamma_positive(x), 1.0));
    }
    if x == floor(x) {
        return Err(Error::Pole(x));
    }
    // Γ(x) Γ(1−x) = π / sin(πx)
    let s = sin(PI * x);
    let lg = ln(PI) - ln(s.abs()) - ln_gamma_positive(1.0 - x);
    let sign = if s < 0.0 { -1.0 } else { 1.0 };
    Ok((lg, sign))
}

pub fn ln_gamma(x: f64) -> Result<f64> {
    ln_gamma_signed(x).map(|(v, _)| v)
}

pub fn gamma(x: f64) -> Result<f64> {
    let (lg, sign) = ln_gamma_signed(x)?;
    Ok(sign * crate::math::exp(lg))
}

/// Euler Beta function `B(a, b) = Γ(a)Γ(b)/Γ(a+b)`, analytically continued to
/// negative non-integer arguments.
///
/// `pole_guard` is the minimal distance of `a`, `b` and `a+b` from the
/// nonpositive integers; closer arguments are rejected.
pub fn beta_guarded(a: f64, b: f64, pole_guard: f64) -> Result<f64> {
    for z in [a, b] {
        if z <= 0.0 && (z - libm::round(z)).abs() < pole_guard {
            return Err(Error::Pole(z));
        }
    }
    let c = a + b;
    if c <= 0.0 && (c - libm::round(c)).abs() < pole_guard {
        // Γ(a+b) is infinite: the Beta value is zero.
        return Ok(0.0);
    }
    let (la, sa) = ln_gamma_signed(a)?;
    let (lb, sb) = ln_gamma_signed(b)?;
    let (lc, sc) = ln_gamma_signed(c)?;
    Ok(sa * sb * sc * crate::math::exp(la + lb - lc))
}

pub fn beta(a: f64, b: f64) -> Result<f64> {
    beta_guarded(a, b, 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn factorials() {
        let mut f = 1.0;
        for k in 1..20 {
            assert_relative_eq!(gamma(k as f64).unwrap(), f, max_relative = 1e-14);
            f *= k as f64;
        }
    }

    #[test]
    fn half_integers_and_reflection() {
        assert_relative_eq!(gamma(0.5).unwrap(), PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(gamma(-0.5).unwrap(), -2.0 * PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(gamma(-1.5).unwrap(), 4.0 / 3.0 * PI.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn matches_libm_lgamma() {
        let mut x = -7.93;
        while x < 40.0 {
            if (x - libm::round(x)).abs() > 1e-6 {
                let (ours, sign) = ln_gamma_signed(x).unwrap();
                let (theirs, s) = libm::lgamma_r(x);
                assert!((ours - theirs).abs() < 1e-12 * theirs.abs().max(1.0), "x={x}");
                assert_eq!(sign, s as f64, "sign at x={x}");
            }
            x += 0.0173;
        }
    }

    #[test]
    fn poles_rejected() {
        assert!(matches!(gamma(0.0), Err(Error::Pole(_))));
        assert!(matches!(gamma(-3.0), Err(Error::Pole(_))));
        assert!(beta(-2.0, 0.5).is_err());
    }

    #[test]
    fn beta_values() {
        assert_relative_eq!(beta(1.0, 1.0).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(beta(2.0, 3.0).unwrap(), 1.0 / 12.0, max_relative = 1e-14);
        // B(1/2, 1/2) = π
        assert_relative_eq!(beta(0.5, 0.5).unwrap(), PI, max_relative = 1e-14);
        // negative argument: B(−0.1, 0.6) = Γ(−0.1)Γ(0.6)/Γ(0.5) < 0
        let v = beta(-0.1, 0.6).unwrap();
        let expected = gamma(-0.1).unwrap() * gamma(0.6).unwrap() / gamma(0.5).unwrap();
        assert_relative_eq!(v, expected, max_relative = 1e-13);
        assert!(v < 0.0);
    }
}
