//! Weak-error sweeps over the grid size and log-log rate fits.

use alloc::format;
use alloc::vec::Vec;

use crate::math::{ln, powf, powi, sqrt};
use crate::moments::{continuous_moment, weak_error_against, ModelSpec, MomentMethod};
use crate::parallel::map_ordered;
use crate::{Error, Result};

const ONE_SIXTH: f64 = 1.0 / 6.0;
/// Points with `|error| ≤ NOISE_FACTOR · error_estimate` are left out of fits.
pub const NOISE_FACTOR: f64 = 10.0;
/// Number of smallest grid sizes left out of fits.
pub const SKIP_SMALLEST: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictedRate {
    pub rate: f64,
    /// The bound carries an extra `log n` at `H = 1/6`.
    pub log_correction: bool,
}

pub fn predicted_rate(hurst: f64, rho: f64) -> PredictedRate {
    if rho == 0.0 {
        return PredictedRate { rate: 1.0, log_correction: false };
    }
    let rate = (3.0 * hurst + 0.5).min(1.0);
    PredictedRate { rate, log_correction: (hurst - ONE_SIXTH).abs() < 1e-9 }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurvePoint {
    pub n: usize,
    /// `E[X_T^N] − E[(X_T^n)^N]`
    pub error: f64,
    pub error_estimate: f64,
    pub method: MomentMethod,
    /// `|error| · n^{rate}` with the predicted rate.
    pub rescaled: f64,
    pub fitted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    /// Root mean square of the residuals in `log|error|`.
    pub rms_log_residual: f64,
}

/// Power law `|e| = A n^{−s}` against `|e| = (α + β log n) / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogComparison {
    /// `α`, `β` of `|e| n = α + β log n`.
    pub alpha: f64,
    pub beta: f64,
    pub rms_log_residual_log_model: f64,
    pub rms_log_residual_power_model: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeakErrorCurve {
    pub model: ModelSpec,
    pub order: usize,
    pub continuous: f64,
    pub continuous_estimate: f64,
    pub points: Vec<CurvePoint>,
    pub predicted: PredictedRate,
    /// Decay rate: the negated log-log slope. `None` when fewer than three
    /// points survive the filters.
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub fit: Option<LineFit>,
    pub degenerate: bool,
    pub log_comparison: Option<LogComparison>,
}

impl WeakErrorCurve {
    pub fn fitted_points(&self) -> usize {
        self.points.iter().filter(|p| p.fitted).count()
    }

    /// `max / min` of the rescaled errors over the fitted points.
    pub fn rescaled_spread(&self) -> Option<f64> {
        let r: Vec<f64> = self.points.iter().filter(|p| p.fitted).map(|p| p.rescaled).collect();
        if r.is_empty() {
            return None;
        }
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        Some(hi / lo)
    }

    /// Whether `slope` is within `tol` of the predicted rate.
    pub fn matches_prediction(&self, tol: f64) -> bool {
        self.slope.is_some_and(|s| (s - self.predicted.rate).abs() <= tol)
    }
}

/// Ordinary least squares of `y` on `x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let m = x.len();
    if m != y.len() || m < 2 {
        return Err(Error::invalid("least squares needs at least two (x, y) pairs"));
    }
    let mf = m as f64;
    let mx = x.iter().sum::<f64>() / mf;
    let my = y.iter().sum::<f64>() / mf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("least squares needs distinct abscissae"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| powi(b - intercept - slope * a, 2)).sum();
    let slope_stderr = if m > 2 { sqrt(ssr / (mf - 2.0) / sxx) } else { f64::NAN };
    Ok(LineFit { intercept, slope, slope_stderr, rms_log_residual: sqrt(ssr / mf) })
}

fn log_comparison(ns: &[f64], errs: &[f64], power: &LineFit) -> Result<LogComparison> {
    let logs: Vec<f64> = ns.iter().map(|&n| ln(n)).collect();
    let scaled: Vec<f64> = ns.iter().zip(errs).map(|(n, e)| n * e).collect();
    let lin = least_squares(&logs, &scaled)?;
    let (alpha, beta) = (lin.intercept, lin.slope);
    let mut ss = 0.0;
    for ((l, n), e) in logs.iter().zip(ns).zip(errs) {
        let model = (alpha + beta * l) / n;
        let r = if model > 0.0 { ln(*e) - ln(model) } else { f64::INFINITY };
        ss += r * r;
    }
    Ok(LogComparison {
        alpha,
        beta,
        rms_log_residual_log_model: sqrt(ss / ns.len() as f64),
        rms_log_residual_power_model: power.rms_log_residual,
    })
}

/// Weak errors of order `order` at each grid size in `n_list` (at least
/// three, strictly increasing), with a log-log rate fit.
pub fn sweep(model: &ModelSpec, order: usize, n_list: &[usize], tol: f64) -> Result<WeakErrorCurve> {
    model.validate()?;
    if n_list.len() < 3 {
        return Err(Error::invalid("a sweep needs at least three grid sizes"));
    }
    if n_list[0] == 0 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("grid sizes must be positive and strictly increasing: {n_list:?}")));
    }
    let continuous = continuous_moment(model, order, tol)?;
    let errors: Vec<_> = map_ordered(n_list, |&n| weak_error_against(model, &continuous, n, tol))
        .into_iter()
        .collect::<Result<_>>()?;
    let predicted = predicted_rate(model.hurst.value(), model.rho);
    let points: Vec<CurvePoint> = errors
        .iter()
        .enumerate()
        .map(|(i, e)| CurvePoint {
            n: e.n,
            error: e.error,
            error_estimate: e.error_estimate,
            method: e.discrete.method,
            rescaled: e.error.abs() * powf(e.n as f64, predicted.rate),
            fitted: i >= SKIP_SMALLEST && e.error.abs() > NOISE_FACTOR * e.error_estimate && e.error != 0.0,
        })
        .collect();
    let (ns, errs): (Vec<f64>, Vec<f64>) =
        points.iter().filter(|p| p.fitted).map(|p| (p.n as f64, p.error.abs())).unzip();
    let mut curve = WeakErrorCurve {
        model: *model,
        order,
        continuous: continuous.value,
        continuous_estimate: continuous.error_estimate,
        points,
        predicted,
        slope: None,
        slope_stderr: None,
        fit: None,
        degenerate: ns.len() < 3,
        log_comparison: None,
    };
    if curve.degenerate {
        return Ok(curve);
    }
    let x: Vec<f64> = ns.iter().map(|&n| ln(n)).collect();
    let y: Vec<f64> = errs.iter().map(|&e| ln(e)).collect();
    let fit = least_squares(&x, &y)?;
    curve.slope = Some(-fit.slope);
    curve.slope_stderr = Some(fit.slope_stderr);
    curve.fit = Some(fit);
    if predicted.log_correction {
        curve.log_comparison = Some(log_comparison(&ns, &errs, &fit)?);
    }
    Ok(curve)
}

/// `lo, 2lo, 4lo, …` up to and including `hi`.
pub fn powers_of_two(lo: usize, hi: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = lo.max(1);
    while n <= hi {
        out.push(n);
        n *= 2;
    }
    out
}
