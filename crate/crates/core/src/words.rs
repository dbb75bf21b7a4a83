//! Words over `{I, J}` and their expansion into integrand terms.
//!
//! A word `w = w₁…w_m` acts on the constant function through
//! `ι(w) = op(w₁) ∘ … ∘ op(w_m)`, the last letter applied first. Letter `w_k`
//! carries the index `N_k = ℓ(w₁…w_k)` and creates one new variable
//! `(x, t)`; variables are numbered in order of creation, so variable 0
//! comes from the last letter and has the largest time.
//!
//! - `J^N F = N(N−1)/2 · f²(x_new) · F`
//! - `I^N F = ρN · f(x_new) · Σ_j ∂_{x_j}F · K(t_j, t_new)`

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::gaussian::{Monomial, SymbolicFactor, VolFn};
use crate::math::powi;
use crate::{Error, Result};

pub const MAX_WORD_LENGTH: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Letter {
    I,
    J,
}

impl Letter {
    pub fn weight(self) -> usize {
        match self {
            Letter::I => 1,
            Letter::J => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Word {
    pub letters: Vec<Letter>,
}

impl Word {
    pub fn new(letters: Vec<Letter>) -> Self {
        Word { letters }
    }

    /// Number of letters `|w|`.
    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    /// Weighted length `ℓ(w)`.
    pub fn weight(&self) -> usize {
        self.letters.iter().map(|l| l.weight()).sum()
    }

    pub fn count(&self, letter: Letter) -> usize {
        self.letters.iter().filter(|&&l| l == letter).count()
    }

    /// `Jᵐ`, the only words surviving at `ρ = 0`.
    pub fn is_pure_j(&self) -> bool {
        self.letters.iter().all(|&l| l == Letter::J)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.letters {
            f.write_str(match l {
                Letter::I => "I",
                Letter::J => "J",
            })?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters = s
            .chars()
            .map(|c| match c {
                'I' | 'i' => Ok(Letter::I),
                'J' | 'j' => Ok(Letter::J),
                other => Err(Error::invalid(format!("letter {other:?} is not I or J"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Word { letters })
    }
}

/// All words of weighted length `n`, in lexicographic order (`I < J`).
pub fn enumerate_words(n: usize) -> Result<Vec<Word>> {
    if n == 0 {
        return Err(Error::invalid("moment order must be at least 1"));
    }
    if n > MAX_WORD_LENGTH {
        return Err(Error::Dimension { what: "word enumeration", dim: n, max: MAX_WORD_LENGTH });
    }
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    extend_words(n, &mut prefix, &mut out);
    Ok(out)
}

fn extend_words(remaining: usize, prefix: &mut Vec<Letter>, out: &mut Vec<Word>) {
    if remaining == 0 {
        out.push(Word::new(prefix.clone()));
        return;
    }
    for letter in [Letter::I, Letter::J] {
        if letter.weight() <= remaining {
            prefix.push(letter);
            extend_words(remaining - letter.weight(), prefix, out);
            prefix.pop();
        }
    }
}

/// True iff the word annihilates the constant function (last letter `I`).
pub fn is_trivial(w: &Word) -> bool {
    matches!(w.letters.last(), Some(Letter::I) | None)
}

/// `|ρ|^{2|w|−ℓ(w)} 2^{ℓ(w)−|w|} ℓ(w)!`, a closed-form coefficient magnitude
/// that does not agree with the operator recursion (e.g. `JJ`: 96 vs 6).
/// Kept for comparison only.
pub fn closed_form_cw(w: &Word, rho: f64) -> f64 {
    let l = w.weight() as i32;
    let m = w.len() as i32;
    let mut fact = 1.0;
    for k in 2..=l {
        fact *= k as f64;
    }
    powi(rho.abs(), 2 * m - l) * powi(2.0, l - m) * fact
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KernelKind {
    /// `K(t_parent, t)`
    Continuous,
    /// `K̃(t_parent, t) = K(η(t_parent), t)`
    Discrete,
}

/// Kernel factors of a term: variable `k` carries `K(t_{parents[k]}, t_k)`
/// when `parents[k]` is set and the constant 1 otherwise. Parents always
/// precede their children, so every factor is evaluated with ordered times.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelEdgeMap {
    pub parents: Vec<Option<usize>>,
    pub kind: KernelKind,
}

impl KernelEdgeMap {
    pub fn vars(&self) -> usize {
        self.parents.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents.iter().enumerate().filter_map(|(k, p)| p.map(|p| (p, k)))
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().filter(|p| p.is_some()).count()
    }

    /// The parent map `α: {2..m} → {0..m}` (1-based, 0 = constant).
    pub fn alpha(&self) -> Vec<usize> {
        self.parents.iter().skip(1).map(|p| p.map_or(0, |p| p + 1)).collect()
    }

    pub fn is_ordered(&self) -> bool {
        self.parents.iter().enumerate().all(|(k, p)| p.is_none_or(|p| p < k))
    }
}

/// One elementary summand `coefficient · ψ(x) · ∏ kernel factors`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntegrandTerm {
    pub word: Word,
    /// Combinatorial weight times `ρ^{rho_power}`.
    pub coefficient: f64,
    /// Combinatorial weight alone.
    pub weight: f64,
    pub rho_power: u32,
    pub psi: SymbolicFactor,
    pub edges: KernelEdgeMap,
}

impl IntegrandTerm {
    pub fn vars(&self) -> usize {
        self.edges.vars()
    }

    pub fn monomial(&self) -> &Monomial {
        &self.psi.terms[0].1
    }

    /// Pointwise value `coefficient · ψ(x) · ∏ K(t_parent, t_k)` with the
    /// kernel supplied by the caller.
    pub fn evaluate<K: Fn(f64, f64) -> f64>(&self, f: &VolFn, x: &[f64], t: &[f64], kernel: K) -> f64 {
        let mut v = self.coefficient * self.psi.evaluate(f, x);
        for (p, k) in self.edges.edges() {
            v *= kernel(t[p], t[k]);
        }
        v
    }
}

/// Applies the operator chain of `w` to the constant function and returns
/// the merged elementary terms in canonical order. Terms keep their
/// structure when `ρ = 0`; only their coefficients vanish.
pub fn expand_word(w: &Word, f: &VolFn, rho: f64, discrete: bool) -> Result<Vec<IntegrandTerm>> {
    if is_trivial(w) {
        return Err(Error::Precondition(format!("word {w} ends in I and integrates to zero")));
    }
    if w.weight() > MAX_WORD_LENGTH {
        return Err(Error::Dimension { what: "word expansion", dim: w.weight(), max: MAX_WORD_LENGTH });
    }
    let kind = if discrete { KernelKind::Discrete } else { KernelKind::Continuous };
    // state: (factors per variable, parents) -> weight
    let mut state: BTreeMap<(Vec<Vec<u8>>, Vec<Option<usize>>), f64> = BTreeMap::new();
    state.insert((Vec::new(), Vec::new()), 1.0);
    let mut prefix_weight = w.weight();
    for &letter in w.letters.iter().rev() {
        let n = prefix_weight as f64;
        let mut next: BTreeMap<(Vec<Vec<u8>>, Vec<Option<usize>>), f64> = BTreeMap::new();
        for ((factors, parents), c) in state {
            match letter {
                Letter::J => {
                    let mut fs = factors.clone();
                    fs.push(vec![0, 0]);
                    let mut ps = parents.clone();
                    ps.push(None);
                    *next.entry((fs, ps)).or_insert(0.0) += c * n * (n - 1.0) / 2.0;
                }
                Letter::I => {
                    for j in 0..factors.len() {
                        let slots = &factors[j];
                        for k in 0..slots.len() {
                            let mut fs = factors.clone();
                            fs[j][k] += 1;
                            if fs[j][k] > f.max_derivative_order() {
                                return Err(Error::Unsupported {
                                    family: f.name(),
                                    what: format!("derivative order {} needed by word {w}", fs[j][k]),
                                });
                            }
                            fs[j].sort_unstable();
                            fs.push(vec![0]);
                            let mut ps = parents.clone();
                            ps.push(Some(j));
                            *next.entry((fs, ps)).or_insert(0.0) += c * n;
                        }
                    }
                }
            }
        }
        state = next;
        prefix_weight -= letter.weight();
    }
    let rho_power = w.count(Letter::I) as u32;
    let rho_factor = powi(rho, rho_power as i32);
    Ok(state
        .into_iter()
        .map(|((factors, parents), weight)| {
            let mono = Monomial::new(factors);
            IntegrandTerm {
                word: w.clone(),
                coefficient: weight * rho_factor,
                weight,
                rho_power,
                psi: SymbolicFactor::monomial(1.0, mono),
                edges: KernelEdgeMap { parents, kind },
            }
        })
        .collect())
}

/// Compact textual form, e.g. `24·ρ^2 · f(x2) f(x1) f'f'(x0) · K(0,1) K(0,2)`.
pub fn describe_term(term: &IntegrandTerm) -> String {
    let mut s = format!("{}", term.weight);
    if term.rho_power > 0 {
        s.push_str(&format!("·rho^{}", term.rho_power));
    }
    for (j, slots) in term.monomial().factors.iter().enumerate() {
        s.push_str(" · ");
        for &d in slots {
            s.push('f');
            for _ in 0..d {
                s.push('\'');
            }
        }
        s.push_str(&format!("(x{j})"));
    }
    let k = match term.edges.kind {
        KernelKind::Continuous => "K",
        KernelKind::Discrete => "Kd",
    };
    for (p, c) in term.edges.edges() {
        s.push_str(&format!(" · {k}(t{p},t{c})"));
    }
    s
}
