//! Exact moments of `X_T` and of the left-point scheme `X_T^n`.
//!
//! `E[X_T^N]` is the sum over nontrivial words of weighted length `N` of
//! simplex integrals `∫_{T>t₀>…>t_{m−1}>0} E[ψ(Ŵ_t)] ∏ K(t_parent, t_k) dt`.
//! The scheme's moment has the same structure with `K̃` and `ψ` read at the
//! grid points `η(t_k)`; since both are constant or explicit per grid cell,
//! it reduces to a sum over ordered cell tuples.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::gaussian::{moment_wick, Method, PreparedPsi, SymbolicFactor, VolFn};
use crate::kernel::{integrated_k, joint_grid_covariance, liouville_k, Covariance, GridSpec, HurstParam};
use crate::linalg::Matrix;
use crate::math::{exp, powf, powi};
use crate::parallel::{map_ordered, map_range};
use crate::quadrature::GradedRule;
use crate::words::{enumerate_words, expand_word, is_trivial, IntegrandTerm, Word};
use crate::{Error, Result};

/// Model `X_t = ∫ f(Ŵ_s) dB_s`, `B = ρW + √(1−ρ²)W^⊥`, `X₀ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub hurst: HurstParam,
    pub rho: f64,
    pub horizon: f64,
    pub f: VolFn,
}

impl ModelSpec {
    pub fn new(hurst: f64, rho: f64, horizon: f64, f: VolFn) -> Result<Self> {
        let m = ModelSpec { hurst: HurstParam::new(hurst)?, rho, horizon, f };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::invalid(format!("correlation {} outside [-1, 1]", self.rho)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon {} must be positive", self.horizon)));
        }
        Ok(())
    }

    pub fn grid(&self, n: usize) -> Result<GridSpec> {
        GridSpec::new(n, self.horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MomentMethod {
    Quadrature,
    WickOracle,
    MonteCarlo,
}

impl MomentMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            MomentMethod::Quadrature => "quadrature",
            MomentMethod::WickOracle => "wick_oracle",
            MomentMethod::MonteCarlo => "monte_carlo",
        }
    }
}

/// Contribution of one word to a moment.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WordContribution {
    pub word: String,
    pub value: f64,
    pub error_estimate: f64,
    pub terms: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MomentReport {
    pub order: usize,
    pub value: f64,
    pub error_estimate: f64,
    pub method: MomentMethod,
    /// Per-word breakdown; empty for methods that do not decompose by word.
    pub terms: Vec<WordContribution>,
}

impl MomentReport {
    fn from_words(order: usize, method: MomentMethod, terms: Vec<WordContribution>) -> Self {
        let value = terms.iter().map(|t| t.value).sum();
        let error_estimate = terms.iter().map(|t| t.error_estimate).sum();
        MomentReport { order, value, error_estimate, method, terms }
    }
}

pub const MAX_QUADRATURE_ORDER: usize = 6;
pub const MAX_CELLS: f64 = 1e7;
pub const WICK_MAX_ORDER: usize = 4;
pub const WICK_MAX_INTERVALS: usize = 64;
const SIMPLEX_NODE_BUDGET: f64 = 2e8;
const GRADING_RATIO: f64 = 0.25;
/// (nodes per panel, grading levels) from coarse to fine.
const LADDER: [(usize, usize); 5] = [(6, 6), (8, 8), (10, 10), (14, 16), (18, 24)];

fn nontrivial_words(order: usize) -> Result<Vec<Word>> {
    Ok(enumerate_words(order)?.into_iter().filter(|w| !is_trivial(w)).collect())
}

/// Terms of a word grouped by kernel pattern, each group folded into one
/// weighted sum of monomials. Zero-coefficient terms are dropped.
fn grouped_terms(terms: &[IntegrandTerm]) -> Vec<(Vec<Option<usize>>, SymbolicFactor)> {
    let mut groups: BTreeMap<Vec<Option<usize>>, Vec<(f64, crate::gaussian::Monomial)>> = BTreeMap::new();
    for t in terms {
        if t.coefficient == 0.0 {
            continue;
        }
        groups.entry(t.edges.parents.clone()).or_default().push((t.coefficient, t.monomial().clone()));
    }
    groups
        .into_iter()
        .map(|(parents, monos)| {
            let vars = parents.len();
            (parents, SymbolicFactor::from_terms(vars, monos))
        })
        .filter(|(_, psi)| !psi.terms.is_empty())
        .collect()
}

fn graded(level: usize, h: HurstParam) -> Result<GradedRule> {
    let (nodes, levels) = LADDER[level];
    let levels = if h.is_brownian() { 1 } else { levels };
    GradedRule::new(nodes, levels, GRADING_RATIO, Some(h.kernel_exponent()))
}

/// Nested integration over `T > t₀ > t₁ > … > t_{m−1} > 0`.
struct SimplexIntegral<'a> {
    parents: &'a [Option<usize>],
    psi: &'a PreparedPsi,
    cov: &'a Covariance,
    horizon: f64,
}

impl SimplexIntegral<'_> {
    fn vars(&self) -> usize {
        self.parents.len()
    }

    fn evaluate(&self, rule: &GradedRule) -> Result<f64> {
        let m = self.vars();
        let mut outer = Vec::with_capacity(rule.size());
        rule.nodes_into(0.0, self.horizon, false, &mut outer);
        let parts = map_ordered(&outer, |&(t, w)| -> Result<f64> {
            let mut times = vec![0.0; m];
            let mut sigma = Matrix::zeros(m);
            times[0] = t;
            sigma[(0, 0)] = self.cov.variance(t);
            let inner = if m == 1 { self.psi.expect(&sigma)? } else { self.level(1, &mut times, &mut sigma, rule)? };
            Ok(w * inner)
        });
        let mut acc = 0.0;
        for p in parts {
            acc += p?;
        }
        Ok(acc)
    }

    fn level(&self, k: usize, times: &mut [f64], sigma: &mut Matrix, rule: &GradedRule) -> Result<f64> {
        let m = self.vars();
        let h = self.cov.hurst();
        let hi = times[k - 1];
        let adjacent = self.parents[k] == Some(k - 1);
        let mut nodes = Vec::with_capacity(rule.size());
        rule.nodes_into(0.0, hi, adjacent, &mut nodes);
        let mut acc = 0.0;
        for (t, w) in nodes {
            let mut wk = w;
            if let Some(p) = self.parents[k] {
                if !adjacent {
                    wk *= liouville_k(times[p], t, h);
                }
            }
            times[k] = t;
            sigma[(k, k)] = self.cov.variance(t);
            for j in 0..k {
                let c = self.cov.eval(times[j], t);
                sigma[(k, j)] = c;
                sigma[(j, k)] = c;
            }
            let inner = if k + 1 == m { self.psi.expect(sigma)? } else { self.level(k + 1, times, sigma, rule)? };
            acc += wk * inner;
        }
        Ok(acc)
    }
}

/// Cache of continuous word contributions, reused across an `n`-sweep.
#[derive(Debug, Clone, Default)]
pub struct MomentCache {
    entries: BTreeMap<CacheKey, WordContribution>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct CacheKey {
    word: String,
    hurst: u64,
    rho: u64,
    horizon: u64,
    f: [u64; 3],
    tol: u64,
}

impl CacheKey {
    fn new(word: &Word, model: &ModelSpec, tol: f64) -> Self {
        let f = match model.f {
            VolFn::Linear { c1 } => [0, c1.to_bits(), 0],
            VolFn::Exponential { c2, c3 } => [1, c2.to_bits(), c3.to_bits()],
            VolFn::ShiftedTanh => [2, 0, 0],
        };
        CacheKey {
            word: format!("{word}"),
            hurst: model.hurst.value().to_bits(),
            rho: model.rho.to_bits(),
            horizon: model.horizon.to_bits(),
            f,
            tol: tol.to_bits(),
        }
    }
}

impl MomentCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `E[X_T^N]` from the word representation.
pub fn continuous_moment(model: &ModelSpec, order: usize, tol: f64) -> Result<MomentReport> {
    continuous_moment_cached(model, order, tol, &mut MomentCache::new())
}

pub fn continuous_moment_cached(
    model: &ModelSpec,
    order: usize,
    tol: f64,
    cache: &mut MomentCache,
) -> Result<MomentReport> {
    model.validate()?;
    check_order(order)?;
    let cov = Covariance::new(model.hurst);
    let mut contributions = Vec::new();
    for word in nontrivial_words(order)? {
        let key = CacheKey::new(&word, model, tol);
        if let Some(hit) = cache.entries.get(&key) {
            contributions.push(hit.clone());
            continue;
        }
        let c = continuous_word(model, &word, tol, &cov)?;
        cache.entries.insert(key, c.clone());
        contributions.push(c);
    }
    Ok(MomentReport::from_words(order, MomentMethod::Quadrature, contributions))
}

fn check_order(order: usize) -> Result<()> {
    if order == 0 {
        return Err(Error::invalid("moment order must be at least 1"));
    }
    if order > MAX_QUADRATURE_ORDER {
        return Err(Error::Dimension { what: "moment quadrature", dim: order, max: MAX_QUADRATURE_ORDER });
    }
    Ok(())
}

fn continuous_word(model: &ModelSpec, word: &Word, tol: f64, cov: &Covariance) -> Result<WordContribution> {
    let terms = expand_word(word, &model.f, model.rho, false)?;
    let groups = grouped_terms(&terms);
    let method = Method::preferred(&model.f);
    let mut value = 0.0;
    let mut error = 0.0;
    for (parents, psi) in &groups {
        let prepared = PreparedPsi::new(psi, &model.f, method)?;
        let integral = SimplexIntegral { parents, psi: &prepared, cov, horizon: model.horizon };
        let (v, e) = refine(integral.vars(), tol, &format!("word {word}"), model.hurst, |rule| integral.evaluate(rule))?;
        value += v;
        error += e;
    }
    Ok(WordContribution { word: format!("{word}"), value, error_estimate: error, terms: terms.len() })
}

/// Climbs the rule ladder until successive values agree to `tol`
/// (relative to `max(1, |value|)`). Returns the finer value and the gap.
fn refine<F: Fn(&GradedRule) -> Result<f64>>(
    vars: usize,
    tol: f64,
    context: &str,
    h: HurstParam,
    eval: F,
) -> Result<(f64, f64)> {
    let mut prev = None;
    for level in 0..LADDER.len() {
        let rule = graded(level, h)?;
        let cost = powf(rule.size() as f64, vars as f64);
        if cost > SIMPLEX_NODE_BUDGET {
            return match prev {
                Some((v, e)) => Err(Error::Tolerance { context: format!("{context} (node budget)"), tol, estimate: e / f64::max(1.0, f64::abs(v)) }),
                None => Err(Error::Budget(format!("{context}: {cost:.3e} quadrature nodes"))),
            };
        }
        let v = eval(&rule)?;
        if let Some((p, _)) = prev {
            let gap = f64::abs(v - p);
            if gap <= tol * f64::max(1.0, f64::abs(v)) {
                return Ok((v, gap));
            }
            prev = Some((v, gap));
        } else {
            prev = Some((v, f64::INFINITY));
        }
    }
    let (v, e) = prev.expect("ladder is not empty");
    Err(Error::Tolerance { context: format!("{context} (finest rule)"), tol, estimate: e / f64::max(1.0, f64::abs(v)) })
}

/// Scheme cells: `[b_c, b_{c+1}]` with `b = (0, 1/n, …, ⌊nT⌋/n, T)`.
struct Cells {
    bounds: Vec<f64>,
    /// `C(b_i, b_j)` at left endpoints.
    cov: Matrix,
}

impl Cells {
    fn new(grid: GridSpec, h: HurstParam) -> Self {
        let joint = joint_grid_covariance(grid, h);
        let k = joint.intervals();
        let mut bounds = Vec::with_capacity(k + 1);
        bounds.push(0.0);
        bounds.extend_from_slice(&joint.endpoints);
        // Ŵ at left endpoint b_i is Ŵ at right endpoint r_{i−1}; Ŵ₀ = 0
        let cov = Matrix::from_fn(k, |i, j| if i == 0 || j == 0 { 0.0 } else { joint.matrix[(i - 1, j - 1)] });
        Cells { bounds, cov }
    }

    fn count(&self) -> usize {
        self.bounds.len() - 1
    }

    fn len(&self, c: usize) -> f64 {
        self.bounds[c + 1] - self.bounds[c]
    }
}

/// Integral over `1 > u₁ > … > u_k > 0` of `∏ g_j(u_j)` with
/// `g_j(u) = (d_j − u)^a` for `Some(d_j)` and 1 for `None`.
struct CellSimplex {
    a: f64,
    coarse: GradedRule,
    fine: GradedRule,
}

impl CellSimplex {
    fn new(h: HurstParam) -> Result<Self> {
        let a = h.kernel_exponent();
        Ok(CellSimplex {
            a,
            coarse: GradedRule::new(12, 20, GRADING_RATIO, Some(a))?,
            fine: GradedRule::new(16, 30, GRADING_RATIO, Some(a))?,
        })
    }

    fn g(&self, d: Option<u32>, u: f64) -> f64 {
        match d {
            Some(d) => powf(d as f64 - u, self.a),
            None => 1.0,
        }
    }

    /// `∫₀ᵘ g(s) ds`.
    fn primitive(&self, d: Option<u32>, u: f64) -> f64 {
        match d {
            Some(d) => {
                let e = self.a + 1.0;
                (powf(d as f64, e) - powf(d as f64 - u, e)) / e
            }
            None => u,
        }
    }

    fn cumulative(&self, pattern: &[Option<u32>], u: f64, rule: &GradedRule) -> f64 {
        if pattern.len() == 1 {
            return self.primitive(pattern[0], u);
        }
        let d = pattern[0];
        let weighted = u == 1.0 && d == Some(1) && self.a != 0.0;
        let mut nodes = Vec::with_capacity(rule.size());
        rule.nodes_into(0.0, u, weighted, &mut nodes);
        let mut acc = 0.0;
        for (s, w) in nodes {
            let g = if weighted { 1.0 } else { self.g(d, s) };
            acc += w * g * self.cumulative(&pattern[1..], s, rule);
        }
        acc
    }

    /// Value and refinement gap.
    fn integral(&self, pattern: &[Option<u32>]) -> (f64, f64) {
        if self.a == 0.0 || pattern.iter().all(|d| d.is_none()) {
            let k = pattern.len();
            let fact: f64 = (1..=k).map(|i| i as f64).product();
            return (1.0 / fact, 0.0);
        }
        let fine = self.cumulative(pattern, 1.0, &self.fine);
        let coarse = self.cumulative(pattern, 1.0, &self.coarse);
        (fine, f64::abs(fine - coarse))
    }
}

struct DiscreteGroup<'a> {
    parents: &'a [Option<usize>],
    psi: PreparedPsi,
}

struct CellSum<'a> {
    groups: &'a [DiscreteGroup<'a>],
    cells: &'a Cells,
    simplex: &'a CellSimplex,
    h: HurstParam,
    n: usize,
}

#[derive(Default)]
struct Partial {
    value: f64,
    error: f64,
}

impl CellSum<'_> {
    fn run(&self, group: &DiscreteGroup<'_>, top: usize) -> Result<Partial> {
        let m = group.parents.len();
        let mut cells = vec![0usize; m];
        cells[0] = top;
        let mut cache = BTreeMap::new();
        let mut out = Partial::default();
        self.descend(group, 1, &mut cells, &mut cache, &mut out)?;
        Ok(out)
    }

    fn descend(
        &self,
        group: &DiscreteGroup<'_>,
        k: usize,
        cells: &mut [usize],
        cache: &mut BTreeMap<Vec<Option<u32>>, (f64, f64)>,
        out: &mut Partial,
    ) -> Result<()> {
        let m = group.parents.len();
        if k == m {
            let (w, e) = self.cell_weight(group.parents, cells, cache);
            if w == 0.0 {
                return Ok(());
            }
            let sigma = Matrix::from_fn(m, |i, j| self.cells.cov[(cells[i], cells[j])]);
            let g = group.psi.expect(&sigma)?;
            out.value += w * g;
            out.error += e * f64::abs(g);
            return Ok(());
        }
        let mut upper = cells[k - 1];
        if let Some(p) = group.parents[k] {
            if cells[p] == 0 {
                return Ok(());
            }
            upper = upper.min(cells[p] - 1);
        }
        for c in 0..=upper {
            cells[k] = c;
            self.descend(group, k + 1, cells, cache, out)?;
        }
        Ok(())
    }

    /// `∫ ∏ K̃ dt` over the ordered tuple of cells, factorised over runs of
    /// variables sharing a cell.
    fn cell_weight(
        &self,
        parents: &[Option<usize>],
        cells: &[usize],
        cache: &mut BTreeMap<Vec<Option<u32>>, (f64, f64)>,
    ) -> (f64, f64) {
        let m = parents.len();
        let mut weight = 1.0;
        let mut err_rel = 0.0;
        let mut start = 0;
        while start < m {
            let c = cells[start];
            let mut end = start + 1;
            while end < m && cells[end] == c {
                end += 1;
            }
            let lo = self.cells.bounds[c];
            let hi = self.cells.bounds[c + 1];
            if end - start == 1 {
                weight *= match parents[start] {
                    Some(p) => integrated_k(self.cells.bounds[cells[p]], lo, hi, self.h),
                    None => hi - lo,
                };
            } else {
                let pattern: Vec<Option<u32>> =
                    (start..end).map(|k| parents[k].map(|p| (cells[p] - c) as u32)).collect();
                let kernels = pattern.iter().filter(|d| d.is_some()).count();
                let len = self.cells.len(c);
                let (v, e) = *cache.entry(pattern.clone()).or_insert_with(|| self.simplex.integral(&pattern));
                let scale = if kernels == 0 {
                    powi(len, (end - start) as i32)
                } else {
                    // kernels only occur in full cells of length 1/n
                    let step = 1.0 / self.n as f64;
                    powi(step, (end - start) as i32) * powf(step, self.h.kernel_exponent() * kernels as f64)
                };
                weight *= v * scale;
                if v != 0.0 {
                    err_rel += e / f64::abs(v);
                }
            }
            start = end;
        }
        (weight, f64::abs(weight) * err_rel)
    }
}

/// `E[(X_T^n)^N]` from the discrete word representation, summed exactly
/// over ordered tuples of grid cells.
pub fn discrete_moment_quadrature(model: &ModelSpec, order: usize, n: usize, tol: f64) -> Result<MomentReport> {
    model.validate()?;
    check_order(order)?;
    let grid = model.grid(n)?;
    let mut expanded = Vec::new();
    for word in nontrivial_words(order)? {
        let terms = expand_word(&word, &model.f, model.rho, true)?;
        let grouped = grouped_terms(&terms);
        expanded.push((word, terms.len(), grouped));
    }
    let k = grid.intervals();
    let max_vars = expanded.iter().filter(|(_, _, g)| !g.is_empty()).map(|(w, _, _)| w.len()).max().unwrap_or(0);
    let mut tuples = 1.0;
    for j in 0..max_vars {
        tuples *= (k + j) as f64 / (j + 1) as f64;
    }
    if tuples > MAX_CELLS {
        return Err(Error::Budget(format!("{tuples:.3e} cell tuples for order {order} with {k} intervals")));
    }
    let cells = Cells::new(grid, model.hurst);
    let simplex = CellSimplex::new(model.hurst)?;
    let method = Method::preferred(&model.f);
    let mut contributions = Vec::new();
    for (word, term_count, grouped) in &expanded {
        let groups: Vec<DiscreteGroup<'_>> = grouped
            .iter()
            .map(|(parents, psi)| Ok(DiscreteGroup { parents, psi: PreparedPsi::new(psi, &model.f, method)? }))
            .collect::<Result<_>>()?;
        let sum = CellSum { groups: &groups, cells: &cells, simplex: &simplex, h: model.hurst, n };
        let mut value = 0.0;
        let mut error = 0.0;
        for group in sum.groups {
            let parts = map_range(cells.count(), |top| sum.run(group, top));
            for p in parts {
                let p = p?;
                value += p.value;
                error += p.error;
            }
        }
        if error > tol * f64::max(1.0, f64::abs(value)) {
            return Err(Error::Tolerance { context: format!("discrete word {word}"), tol, estimate: error });
        }
        contributions.push(WordContribution {
            word: format!("{word}"),
            value,
            error_estimate: error,
            terms: *term_count,
        });
    }
    Ok(MomentReport::from_words(order, MomentMethod::Quadrature, contributions))
}

/// True when [`discrete_moment_wick`] accepts the inputs.
pub fn wick_available(model: &ModelSpec, order: usize, n: usize) -> bool {
    matches!(model.f, VolFn::Linear { .. } | VolFn::Exponential { .. })
        && order <= WICK_MAX_ORDER
        && order >= 1
        && GridSpec::new(n, model.horizon).map(|g| g.intervals() <= WICK_MAX_INTERVALS).unwrap_or(false)
}

/// `E[(X_T^n)^N]` by expanding `(Σᵢ f(Ŵ_{bᵢ}) Bᵢ)^N` over index multisets
/// and taking exact Gaussian expectations of each product.
pub fn discrete_moment_wick(model: &ModelSpec, order: usize, n: usize) -> Result<MomentReport> {
    model.validate()?;
    if order == 0 {
        return Err(Error::invalid("moment order must be at least 1"));
    }
    if matches!(model.f, VolFn::ShiftedTanh) {
        return Err(Error::Unsupported { family: model.f.name(), what: "the Wick oracle".into() });
    }
    let grid = model.grid(n)?;
    let k = grid.intervals();
    if order > WICK_MAX_ORDER || k > WICK_MAX_INTERVALS {
        return Err(Error::Budget(format!(
            "Wick oracle limited to order <= {WICK_MAX_ORDER} and <= {WICK_MAX_INTERVALS} intervals (got {order}, {k})"
        )));
    }
    let joint = joint_grid_covariance(grid, model.hurst);
    let rho = model.rho;
    // covariance accessors on left-endpoint Ŵ and scheme increments B
    let hat = |i: usize, j: usize| if i == 0 || j == 0 { 0.0 } else { joint.matrix[(i - 1, j - 1)] };
    let hat_b = |i: usize, j: usize| if i == 0 { 0.0 } else { rho * joint.matrix[(i - 1, k + j)] };
    let b_var = |j: usize| joint.matrix[(k + j, k + j)];

    let mut fact = [1.0f64; WICK_MAX_ORDER + 1];
    for i in 1..=WICK_MAX_ORDER {
        fact[i] = fact[i - 1] * i as f64;
    }
    let f = model.f;
    let parts = map_range(k, |first| {
        let mut acc = 0.0;
        let mut idx = vec![first];
        multisets(&mut idx, order, k, &mut |indices| {
            // distinct indices with multiplicities
            let mut distinct: Vec<(usize, u8)> = Vec::with_capacity(order);
            for &i in indices {
                match distinct.last_mut() {
                    Some((j, m)) if *j == i => *m += 1,
                    _ => distinct.push((i, 1)),
                }
            }
            let mut multinomial = fact[order];
            for &(_, m) in &distinct {
                multinomial /= fact[m as usize];
            }
            let d = distinct.len();
            let value = match f {
                VolFn::Linear { c1 } => {
                    if distinct[0].0 == 0 {
                        return;
                    }
                    let sigma = Matrix::from_fn(2 * d, |a, b| {
                        let (ia, ib) = (distinct[a % d].0, distinct[b % d].0);
                        match (a < d, b < d) {
                            (true, true) => hat(ia, ib),
                            (true, false) => hat_b(ia, ib),
                            (false, true) => hat_b(ib, ia),
                            (false, false) => {
                                if ia == ib {
                                    b_var(ia)
                                } else {
                                    0.0
                                }
                            }
                        }
                    });
                    let kappa: Vec<u8> = distinct.iter().chain(distinct.iter()).map(|&(_, m)| m).collect();
                    powi(c1, order as i32) * moment_wick(&kappa, &sigma, None)
                }
                VolFn::Exponential { c2, c3 } => {
                    let a: Vec<f64> = distinct.iter().map(|&(_, m)| c3 * m as f64).collect();
                    let mut quad = 0.0;
                    for x in 0..d {
                        for y in 0..d {
                            quad += a[x] * a[y] * hat(distinct[x].0, distinct[y].0);
                        }
                    }
                    // exponential tilt shifts the increments by Cov(B, Ŵ)·a
                    let mean: Vec<f64> = (0..d)
                        .map(|y| (0..d).map(|x| a[x] * hat_b(distinct[x].0, distinct[y].0)).sum())
                        .collect();
                    let sigma = Matrix::from_fn(d, |x, y| if x == y { b_var(distinct[x].0) } else { 0.0 });
                    let kappa: Vec<u8> = distinct.iter().map(|&(_, m)| m).collect();
                    powi(c2, order as i32) * exp(0.5 * quad) * moment_wick(&kappa, &sigma, Some(&mean))
                }
                VolFn::ShiftedTanh => unreachable!(),
            };
            acc += multinomial * value;
        });
        acc
    });
    let value = parts.iter().sum();
    Ok(MomentReport { order, value, error_estimate: 0.0, method: MomentMethod::WickOracle, terms: Vec::new() })
}

/// Calls `visit` for every non-decreasing index sequence of length `len`
/// extending `prefix`, with entries below `bound`.
fn multisets<F: FnMut(&[usize])>(prefix: &mut Vec<usize>, len: usize, bound: usize, visit: &mut F) {
    if prefix.len() == len {
        visit(prefix);
        return;
    }
    let start = *prefix.last().unwrap_or(&0);
    for i in start..bound {
        prefix.push(i);
        multisets(prefix, len, bound, visit);
        prefix.pop();
    }
}

/// Per-word comparison of the continuous and discrete moments.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WordError {
    pub word: String,
    pub continuous: f64,
    pub discrete: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeakError {
    pub order: usize,
    pub n: usize,
    /// `E[X_T^N] − E[(X_T^n)^N]`
    pub error: f64,
    pub error_estimate: f64,
    pub continuous: MomentReport,
    pub discrete: MomentReport,
    pub words: Vec<WordError>,
}

/// `E[X_T^N] − E[(X_T^n)^N]`, with the discrete moment from the Wick oracle
/// when it applies and from the cell quadrature otherwise.
pub fn weak_error(model: &ModelSpec, order: usize, n: usize, tol: f64) -> Result<WeakError> {
    let continuous = continuous_moment(model, order, tol)?;
    weak_error_against(model, &continuous, n, tol)
}

pub fn weak_error_against(model: &ModelSpec, continuous: &MomentReport, n: usize, tol: f64) -> Result<WeakError> {
    let order = continuous.order;
    let discrete = if wick_available(model, order, n) {
        discrete_moment_wick(model, order, n)?
    } else {
        discrete_moment_quadrature(model, order, n, tol)?
    };
    let words = continuous
        .terms
        .iter()
        .map(|c| WordError {
            word: c.word.clone(),
            continuous: c.value,
            discrete: discrete.terms.iter().find(|d| d.word == c.word).map(|d| d.value),
        })
        .collect();
    Ok(WeakError {
        order,
        n,
        error: continuous.value - discrete.value,
        error_estimate: continuous.error_estimate + discrete.error_estimate,
        continuous: continuous.clone(),
        discrete,
        words,
    })
}

/// `∫₀ᵀ E[f(Ŵ_t)²] dt` by a graded one-dimensional rule; equals the second
/// moment by the Itô isometry.
pub fn second_moment_isometry(model: &ModelSpec, tol: f64) -> Result<f64> {
    let f = model.f;
    let cov = Covariance::new(model.hurst);
    let psi = SymbolicFactor::powers(&[2]);
    let prepared = PreparedPsi::new(&psi, &f, Method::preferred(&f))?;
    let mut prev: Option<f64> = None;
    for level in 0..LADDER.len() {
        let rule = graded(level, model.hurst)?;
        let mut acc = 0.0;
        let mut buf = Vec::new();
        rule.nodes_into(0.0, model.horizon, false, &mut buf);
        for (t, w) in buf {
            let s = Matrix::from_rows(&[&[cov.variance(t)]]);
            acc += w * prepared.expect(&s)?;
        }
        if let Some(p) = prev {
            if f64::abs(acc - p) <= tol * f64::max(1.0, f64::abs(acc)) {
                return Ok(acc);
            }
        }
        prev = Some(acc);
    }
    Err(Error::Tolerance { context: "isometry integral".into(), tol, estimate: f64::NAN })
}

/// `Σᵢ E[f(Ŵ_{bᵢ})²]·|cellᵢ|`, the scheme's second moment.
pub fn discrete_second_moment(model: &ModelSpec, n: usize) -> Result<f64> {
    let grid = model.grid(n)?;
    let cells = Cells::new(grid, model.hurst);
    let psi = SymbolicFactor::powers(&[2]);
    let prepared = PreparedPsi::new(&psi, &model.f, Method::preferred(&model.f))?;
    let mut acc = 0.0;
    for c in 0..cells.count() {
        let s = Matrix::from_rows(&[&[cells.cov[(c, c)]]]);
        acc += prepared.expect(&s)? * cells.len(c);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear(h: f64, rho: f64) -> ModelSpec {
        ModelSpec::new(h, rho, 1.0, VolFn::Linear { c1: 1.0 }).unwrap()
    }

    #[test]
    fn brownian_closed_forms() {
        let m = linear(0.5, 1.0);
        assert_relative_eq!(continuous_moment(&m, 2, 1e-10).unwrap().value, 0.5, epsilon = 1e-10);
        assert_relative_eq!(continuous_moment(&m, 3, 1e-10).unwrap().value, 1.0, epsilon = 1e-10);
        assert_relative_eq!(continuous_moment(&m, 4, 1e-10).unwrap().value, 3.75, epsilon = 1e-10);
        let m0 = linear(0.5, 0.0);
        assert_relative_eq!(continuous_moment(&m0, 4, 1e-10).unwrap().value, 1.75, epsilon = 1e-10);
        assert_eq!(continuous_moment(&m0, 3, 1e-10).unwrap().value, 0.0);
        assert_eq!(continuous_moment(&m, 1, 1e-10).unwrap().value, 0.0);
    }

    #[test]
    fn second_moment_formula() {
        for &h in &[0.1, 0.3] {
            let m = ModelSpec::new(h, 0.4, 1.3, VolFn::Linear { c1: 1.0 }).unwrap();
            let want = powf(1.3, 2.0 * h + 1.0) / (2.0 * h * (2.0 * h + 1.0));
            let got = continuous_moment(&m, 2, 1e-10).unwrap();
            assert_relative_eq!(got.value, want, max_relative = 1e-9);
            assert_relative_eq!(second_moment_isometry(&m, 1e-10).unwrap(), want, max_relative = 1e-9);
        }
    }

    #[test]
    fn discrete_second_moment_matches_paths() {
        let m = linear(0.3, 0.7);
        for n in [4, 8] {
            let exact = discrete_second_moment(&m, n).unwrap();
            let q = discrete_moment_quadrature(&m, 2, n, 1e-10).unwrap();
            let w = discrete_moment_wick(&m, 2, n).unwrap();
            assert_relative_eq!(q.value, exact, max_relative = 1e-12);
            assert_relative_eq!(w.value, exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn discrete_paths_agree_small() {
        for &(h, rho) in &[(0.5, 1.0), (0.3, 0.7), (0.1, 1.0), (0.1, 0.0)] {
            let m = linear(h, rho);
            for order in [3, 4] {
                let q = discrete_moment_quadrature(&m, order, 4, 1e-9).unwrap();
                let w = discrete_moment_wick(&m, order, 4).unwrap();
                assert!(
                    f64::abs(q.value - w.value) <= 1e-8 * f64::max(1.0, w.value.abs()),
                    "H={h} rho={rho} N={order}: {} vs {}",
                    q.value,
                    w.value
                );
            }
        }
    }

    #[test]
    fn exponential_discrete_paths_agree() {
        let m = ModelSpec::new(0.3, 0.6, 1.0, VolFn::Exponential { c2: 0.8, c3: 0.5 }).unwrap();
        for order in [2, 3] {
            let q = discrete_moment_quadrature(&m, order, 4, 1e-9).unwrap();
            let w = discrete_moment_wick(&m, order, 4).unwrap();
            assert_relative_eq!(q.value, w.value, max_relative = 1e-9);
        }
    }

    #[test]
    fn partial_last_interval() {
        let m = ModelSpec::new(0.3, 0.8, 1.1, VolFn::Linear { c1: 1.0 }).unwrap();
        let q = discrete_moment_quadrature(&m, 3, 4, 1e-9).unwrap();
        let w = discrete_moment_wick(&m, 3, 4).unwrap();
        assert_relative_eq!(q.value, w.value, max_relative = 1e-9);
    }

    #[test]
    fn odd_moments_vanish_without_correlation() {
        let m = linear(0.2, 0.0);
        assert_eq!(discrete_moment_wick(&m, 3, 8).unwrap().value, 0.0);
        assert_eq!(discrete_moment_quadrature(&m, 3, 8, 1e-9).unwrap().value, 0.0);
    }

    #[test]
    fn brownian_weak_error_third_moment() {
        // E[(X^n)³] for f = x, ρ = 1, H = 1/2 approaches 1
        let m = linear(0.5, 1.0);
        let e8 = weak_error(&m, 3, 8, 1e-10).unwrap();
        let e16 = weak_error(&m, 3, 16, 1e-10).unwrap();
        assert!(e16.error.abs() < e8.error.abs());
        assert_relative_eq!(e8.error / e16.error, 2.0, max_relative = 0.1);
    }
}
