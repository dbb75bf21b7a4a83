use std::fs::File;
use std::io::BufWriter;

use roughvol_core::lab::{sweep, WeakErrorCurve};
use roughvol_core::lower_bound::{constants_sweep, empirical_lower_bound};
use roughvol_core::moments::{
    continuous_moment, discrete_moment_quadrature, discrete_moment_wick, weak_error, wick_available, ModelSpec,
    MomentReport,
};
use roughvol_core::simulate::{estimate_moment_with, sample_grid_paths, Sampling};
use roughvol_core::words::{describe_term, enumerate_words, expand_word, is_trivial};

use crate::config::{Command, MethodArg, RunConfig, SamplingArg, DEFAULT_LOWER_BOUND_GRID, DEFAULT_RATE_GRID};
use crate::error::CliError;
use crate::output::{Cell, Check, Report, Table};
use crate::paths::{write_paths, PathHeader};
use crate::selfcheck;

/// Slope tolerance of `rate --check`: the predicted rate ± this.
pub const RATE_TOL_CORRELATED: f64 = 0.07;
pub const RATE_TOL_UNCORRELATED: f64 = 0.1;
/// `simulate --check` passes within this many standard errors.
pub const MC_SIGMAS: f64 = 4.0;
/// Beta-vs-integral agreement required by `lower-bound --sweep --check`.
pub const CONSTANTS_GAP: f64 = 1e-8;

pub fn execute(config: &RunConfig) -> Result<Report, CliError> {
    if config.tol <= 0.0 || config.tol.is_nan() {
        return Err(CliError::Usage(format!("--tol must be positive (got {})", config.tol)));
    }
    match config.command {
        Command::Moment => moment(config),
        Command::DiscreteMoment => discrete_moment(config),
        Command::WeakError => weak_error_cmd(config),
        Command::Rate => rate(config),
        Command::Simulate => simulate(config),
        Command::LowerBound => lower_bound(config),
        Command::Selfcheck => selfcheck_cmd(config),
    }
}

fn report(config: &RunConfig, table: Table) -> Report {
    Report::new(config.command.as_str(), config.header_value(), table)
}

fn moment_table(m: &MomentReport) -> Table {
    let mut t = Table::new(&["word", "value", "error_estimate", "terms"]);
    for w in &m.terms {
        t.push(vec![w.word.clone().into(), w.value.into(), w.error_estimate.into(), w.terms.into()]);
    }
    t.push(vec!["total".into(), m.value.into(), m.error_estimate.into(), m.terms.iter().map(|w| w.terms).sum::<usize>().into()]);
    t
}

fn terms_table(model: &ModelSpec, order: usize, discrete: bool) -> Result<Table, CliError> {
    let mut t = Table::new(&["word", "term", "coefficient", "weight", "rho_power", "description"]);
    for w in enumerate_words(order)?.into_iter().filter(|w| !is_trivial(w)) {
        for (i, term) in expand_word(&w, &model.f, model.rho, discrete)?.iter().enumerate() {
            t.push(vec![
                w.to_string().into(),
                i.into(),
                term.coefficient.into(),
                term.weight.into(),
                term.rho_power.into(),
                describe_term(term).into(),
            ]);
        }
    }
    Ok(t)
}

fn moment(config: &RunConfig) -> Result<Report, CliError> {
    let model = config.model_spec()?;
    if config.dump_terms {
        return Ok(report(config, terms_table(&model, config.order, false)?));
    }
    let m = continuous_moment(&model, config.order, config.tol)?;
    let mut r = report(config, moment_table(&m));
    r.summarize("value", m.value)?;
    r.summarize("error_estimate", m.error_estimate)?;
    if config.check {
        let bound = config.tol * m.value.abs().max(1.0);
        r.checks.push(Check::new(
            "converged",
            m.error_estimate <= bound,
            format!("error estimate {:.3e} against {:.3e}", m.error_estimate, bound),
        ));
    }
    Ok(r)
}

fn discrete_by(model: &ModelSpec, order: usize, n: usize, tol: f64, method: MethodArg) -> Result<MomentReport, CliError> {
    Ok(match method {
        MethodArg::Wick => discrete_moment_wick(model, order, n)?,
        MethodArg::Quadrature => discrete_moment_quadrature(model, order, n, tol)?,
        MethodArg::Auto if wick_available(model, order, n) => discrete_moment_wick(model, order, n)?,
        MethodArg::Auto => discrete_moment_quadrature(model, order, n, tol)?,
    })
}

fn discrete_moment(config: &RunConfig) -> Result<Report, CliError> {
    let model = config.model_spec()?;
    let n = config.require_n()?;
    if config.dump_terms {
        return Ok(report(config, terms_table(&model, config.order, true)?));
    }
    let m = discrete_by(&model, config.order, n, config.tol, config.method)?;
    let mut r = report(config, moment_table(&m));
    r.summarize("value", m.value)?;
    r.summarize("error_estimate", m.error_estimate)?;
    r.summarize("method", m.method.as_str())?;
    if config.check {
        if !wick_available(&model, config.order, n) {
            return Err(CliError::Usage(format!(
                "--check compares quadrature with Wick pairings, which are not available for {} at N={} n={n}",
                config.model, config.order
            )));
        }
        let q = discrete_moment_quadrature(&model, config.order, n, config.tol)?;
        let w = discrete_moment_wick(&model, config.order, n)?;
        let gap = (q.value - w.value).abs();
        let bound = (3.0 * q.error_estimate).max(1e-6);
        r.summarize("quadrature", q.value)?;
        r.summarize("wick", w.value)?;
        r.checks.push(Check::new("oracle agreement", gap <= bound, format!("|quadrature − wick| = {gap:.3e}, bound {bound:.3e}")));
    }
    Ok(r)
}

fn weak_error_cmd(config: &RunConfig) -> Result<Report, CliError> {
    let model = config.model_spec()?;
    let n = config.require_n()?;
    let e = weak_error(&model, config.order, n, config.tol)?;
    let mut t = Table::new(&["word", "continuous", "discrete", "error", "error_estimate"]);
    for w in &e.words {
        let diff = w.discrete.map(|d| w.continuous - d);
        t.push(vec![w.word.clone().into(), w.continuous.into(), w.discrete.into(), diff.into(), Cell::Empty]);
    }
    t.push(vec!["total".into(), e.continuous.value.into(), e.discrete.value.into(), e.error.into(), e.error_estimate.into()]);
    let mut r = report(config, t);
    r.summarize("n", e.n)?;
    r.summarize("error", e.error)?;
    r.summarize("error_estimate", e.error_estimate)?;
    r.summarize("discrete_method", e.discrete.method.as_str())?;
    if config.check {
        r.checks.push(Check::new(
            "resolved",
            e.error.abs() > 10.0 * e.error_estimate,
            format!("|error| = {:.3e}, estimate {:.3e}", e.error.abs(), e.error_estimate),
        ));
    }
    Ok(r)
}

pub fn rate_checks(curve: &WeakErrorCurve) -> Vec<Check> {
    let tol = if curve.model.rho == 0.0 { RATE_TOL_UNCORRELATED } else { RATE_TOL_CORRELATED };
    let mut checks = Vec::new();
    let errs: Vec<f64> = curve.points.iter().map(|p| p.error.abs()).collect();
    let listed: Vec<String> = errs.iter().map(|e| format!("{e:.3e}")).collect();
    checks.push(Check::new("decreasing", errs.windows(2).all(|w| w[1] < w[0]), format!("|errors| {}", listed.join(", "))));
    let detail = match (curve.slope, curve.slope_stderr) {
        (Some(s), Some(e)) => format!("slope {s:.4} ± {e:.4}, predicted {} ± {tol}", curve.predicted.rate),
        _ => format!("degenerate fit ({} usable points)", curve.fitted_points()),
    };
    checks.push(Check::new("slope", !curve.degenerate && curve.matches_prediction(tol), detail));
    checks
}

fn rate(config: &RunConfig) -> Result<Report, CliError> {
    let model = config.model_spec()?;
    let ns = config.n_list_or(&DEFAULT_RATE_GRID);
    let curve = sweep(&model, config.order, &ns, config.tol)?;
    let mut t = Table::new(&[
        "n", "error", "error_estimate", "method", "rescaled", "fitted", "hurst", "rho", "T", "model", "N",
    ]);
    for p in &curve.points {
        t.push(vec![
            p.n.into(),
            p.error.into(),
            p.error_estimate.into(),
            p.method.as_str().into(),
            p.rescaled.into(),
            p.fitted.into(),
            config.hurst.into(),
            config.rho.into(),
            config.horizon.into(),
            config.model.to_string().into(),
            config.order.into(),
        ]);
    }
    let mut r = report(config, t);
    r.summarize("continuous", curve.continuous)?;
    r.summarize("slope", curve.slope)?;
    r.summarize("slope_stderr", curve.slope_stderr)?;
    r.summarize("predicted", curve.predicted)?;
    r.summarize("degenerate", curve.degenerate)?;
    r.summarize("rescaled_spread", curve.rescaled_spread())?;
    if let Some(cmp) = curve.log_comparison {
        r.summarize("log_comparison", cmp)?;
    }
    if config.check {
        r.checks = rate_checks(&curve);
    }
    Ok(r)
}

fn simulate(config: &RunConfig) -> Result<Report, CliError> {
    let model = config.model_spec()?;
    let n = config.require_n()?;
    let sampling = match config.sampling {
        SamplingArg::Antithetic => Sampling::Antithetic,
        SamplingArg::Plain => Sampling::Plain,
    };
    if let Some(path) = &config.dump_paths {
        let grid = model.grid(n)?;
        let header = PathHeader {
            n: n as u64,
            intervals: grid.intervals() as u64,
            paths: config.dump_count as u64,
            seed: config.seed,
            hurst: config.hurst,
            rho: config.rho,
            horizon: config.horizon,
        };
        let mut out = BufWriter::new(File::create(path)?);
        write_paths(&mut out, &header, &model, sample_grid_paths(&model, n, config.dump_count, config.seed)?)?;
        std::io::Write::flush(&mut out)?;
    }
    let est = estimate_moment_with(&model, config.order, n, config.paths, config.seed, sampling)?;
    let exact = if wick_available(&model, config.order, n) {
        Some(discrete_moment_wick(&model, config.order, n)?.value)
    } else {
        None
    };
    let z = exact.map(|x| (est.mean - x) / est.std_error);
    let mut t = Table::new(&["n", "paths", "seed", "sampling", "mean", "std_error", "exact", "z_score"]);
    let sampling_name = match config.sampling {
        SamplingArg::Antithetic => "antithetic",
        SamplingArg::Plain => "plain",
    };
    t.push(vec![
        n.into(),
        est.paths.into(),
        Cell::Int(est.seed as i64),
        sampling_name.into(),
        est.mean.into(),
        est.std_error.into(),
        exact.into(),
        z.into(),
    ]);
    let mut r = report(config, t);
    r.summarize("estimate", est)?;
    r.summarize("exact", exact)?;
    if config.check {
        let Some(z) = z else {
            return Err(CliError::Usage("--check needs the exact discrete moment (linear or exp model, N ≤ 4, n ≤ 64)".into()));
        };
        r.checks.push(Check::new("within sigmas", z.abs() <= MC_SIGMAS, format!("z = {z:.3}, limit {MC_SIGMAS}")));
    }
    Ok(r)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn lower_bound(config: &RunConfig) -> Result<Report, CliError> {
    if let Some(s) = config.sweep {
        let rows = constants_sweep(s.lo, s.hi, s.count, config.tol.min(1e-10))?;
        let mut t = Table::new(&["H", "B1", "B2", "B3", "C2", "C3", "C2_minus_C3", "max_gap"]);
        for row in &rows {
            let b = &row.beta;
            t.push(vec![
                b.hurst.into(),
                b.b1.into(),
                b.b2.into(),
                b.b3.into(),
                b.c2.into(),
                b.c3.into(),
                b.difference().into(),
                row.max_gap().into(),
            ]);
        }
        let mut r = report(config, t);
        let worst_gap = rows.iter().map(|x| x.max_gap()).fold(0.0, f64::max);
        let min_diff = rows.iter().map(|x| x.beta.difference()).fold(f64::INFINITY, f64::min);
        r.summarize("max_gap", worst_gap)?;
        r.summarize("min_difference", min_diff)?;
        if config.check {
            r.checks.push(Check::new("beta vs integral", worst_gap <= CONSTANTS_GAP, format!("max gap {worst_gap:.3e}")));
            r.checks.push(Check::new("C2 > C3", min_diff > 0.0, format!("min C2 − C3 = {min_diff:.6}")));
            let signs = rows.iter().all(|x| {
                let b = &x.beta;
                b.b1 < 0.0 && b.b2 < 0.0 && b.b3 < 0.0 && b.c2 > 0.0 && b.c3 > 0.0
            });
            r.checks.push(Check::new("signs", signs, "B1, B2, B3 < 0 and C2, C3 > 0"));
        }
        return Ok(r);
    }
    let ns = config.n_list_or(&DEFAULT_LOWER_BOUND_GRID);
    let curve = empirical_lower_bound(config.hurst, &ns, config.tol)?;
    let mut t = Table::new(&["n", "error", "rescaled"]);
    for &(n, e, s) in &curve.points {
        t.push(vec![n.into(), e.into(), s.into()]);
    }
    let mut r = report(config, t);
    r.summarize("constants", curve.constants)?;
    r.summarize("C2_minus_C3", curve.constants.difference())?;
    r.summarize("scaled_difference", curve.scaled_difference)?;
    r.summarize("window_min", curve.window_min)?;
    if config.check {
        r.checks.extend(lower_bound_curve_checks(&curve.points.iter().map(|p| p.2).collect::<Vec<_>>()));
    }
    Ok(r)
}

/// Checks on the rescaled sequence `n^{3H+1/2} E_{n,3}`.
pub fn lower_bound_curve_checks(rescaled: &[f64]) -> Vec<Check> {
    let mut checks = Vec::new();
    let positive = rescaled.iter().all(|&v| v > 0.0);
    checks.push(Check::new("positive", positive, format!("{rescaled:.4?}")));
    if rescaled.len() >= 3 {
        let tail = &rescaled[rescaled.len() - 3..];
        let min_tail = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let med = median(rescaled.to_vec());
        checks.push(Check::new(
            "non-vanishing",
            min_tail > 0.5 * med,
            format!("last-three minimum {min_tail:.4}, half median {:.4}", 0.5 * med),
        ));
        let mean = tail.iter().sum::<f64>() / 3.0;
        let dev = tail.iter().map(|v| (v - mean).abs() / mean.abs()).fold(0.0, f64::max);
        checks.push(Check::new("stable", dev < 0.2, format!("last three deviate ≤ {:.2}% from their mean", 100.0 * dev)));
    }
    checks
}

fn selfcheck_cmd(config: &RunConfig) -> Result<Report, CliError> {
    let results = selfcheck::run_all();
    let mut t = Table::new(&["check", "passed", "detail"]);
    for c in &results {
        t.push(vec![c.name.clone().into(), c.passed.into(), c.detail.clone().into()]);
    }
    let mut r = report(config, t);
    r.checks = results;
    Ok(r)
}
