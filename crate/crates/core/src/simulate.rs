//! Monte Carlo of the left-point scheme with exact joint Gaussian sampling of
//! `Ŵ` on the grid and the Brownian increments.
//!
//! Every path is drawn from its own ChaCha8 stream (`seed`, stream = path
//! index), so estimates are reproducible and independent of thread count.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::kernel::{joint_grid_covariance, GridSpec};
use crate::linalg::{Cholesky, Matrix};
use crate::math::{powi, sqrt};
use crate::moments::ModelSpec;
use crate::parallel::map_range;
use crate::{Error, Result};

/// One sampled path on the scheme grid with `K` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    /// `Ŵ` at the left endpoint of each interval (`hat_w[0] = Ŵ₀ = 0`).
    pub hat_w: Vec<f64>,
    /// `Ŵ_T`
    pub hat_w_terminal: f64,
    /// `W` increments over the intervals.
    pub dw: Vec<f64>,
    /// Independent `W^⊥` increments.
    pub dw_perp: Vec<f64>,
}

impl GridPath {
    pub fn intervals(&self) -> usize {
        self.dw.len()
    }

    fn negate(&mut self) {
        for v in self.hat_w.iter_mut().chain(&mut self.dw).chain(&mut self.dw_perp) {
            *v = -*v;
        }
        self.hat_w_terminal = -self.hat_w_terminal;
    }
}

/// Factorised joint law of `(ΔW₁..ΔW_K, Ŵ_{r₁..r_K})`.
#[derive(Debug, Clone)]
pub struct GridSampler {
    pub grid: GridSpec,
    factor: Cholesky,
    lengths: Vec<f64>,
}

impl GridSampler {
    pub fn new(model: &ModelSpec, n: usize) -> Result<Self> {
        model.validate()?;
        let grid = model.grid(n)?;
        let joint = joint_grid_covariance(grid, model.hurst);
        let k = joint.intervals();
        // increments first: Ŵ then only carries its conditional part, which
        // vanishes (and is dropped) in the Brownian case
        let order = |i: usize| if i < k { k + i } else { i - k };
        let permuted = Matrix::from_fn(2 * k, |i, j| joint.matrix[(order(i), order(j))]);
        let factor = match Cholesky::semidefinite(&permuted, 1e-10) {
            Ok(f) => f,
            Err(_) => Cholesky::with_jitter(&permuted)?,
        };
        let lengths = (0..k).map(|j| joint.matrix[(k + j, k + j)]).collect();
        Ok(GridSampler { grid, factor, lengths })
    }

    pub fn intervals(&self) -> usize {
        self.lengths.len()
    }

    /// Jitter added to the covariance before factorisation (0 if none).
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// Path `index` of the stream identified by `seed`.
    pub fn path(&self, seed: u64, index: u64) -> GridPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let k = self.intervals();
        let z: Vec<f64> = (0..2 * k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut x = vec![0.0; 2 * k];
        self.factor.apply(&z, &mut x);
        let mut hat_w = Vec::with_capacity(k);
        hat_w.push(0.0);
        hat_w.extend_from_slice(&x[k..2 * k - 1]);
        let dw_perp = self
            .lengths
            .iter()
            .map(|len| {
                let g: f64 = StandardNormal.sample(&mut rng);
                sqrt(*len) * g
            })
            .collect();
        GridPath { hat_w, hat_w_terminal: x[2 * k - 1], dw: x[..k].to_vec(), dw_perp }
    }
}

/// Paths `0..paths` of the stream `seed`.
pub fn sample_grid_paths(model: &ModelSpec, n: usize, paths: usize, seed: u64) -> Result<impl Iterator<Item = GridPath>> {
    let sampler = GridSampler::new(model, n)?;
    Ok((0..paths as u64).map(move |i| sampler.path(seed, i)))
}

/// `X_T^n = Σᵢ f(Ŵ_{bᵢ})(ρ ΔWᵢ + √(1−ρ²) ΔWᵢ^⊥)`, including the trailing
/// partial interval when `nT` is not an integer.
pub fn scheme_terminal(path: &GridPath, model: &ModelSpec) -> f64 {
    let rho = model.rho;
    let perp = sqrt((1.0 - rho * rho).max(0.0));
    let mut x = 0.0;
    for i in 0..path.intervals() {
        x += model.f.value(path.hat_w[i]) * (rho * path.dw[i] + perp * path.dw_perp[i]);
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Paths simulated (both members of each antithetic pair count).
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Sampling {
    Plain,
    /// Each draw is paired with its global sign flip; the standard error is
    /// computed over pair means.
    Antithetic,
}

const BLOCK: usize = 4096;

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if other.count == 0.0 {
            return self;
        }
        if self.count == 0.0 {
            return other;
        }
        let count = self.count + other.count;
        let d = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + d * other.count / count,
            m2: self.m2 + other.m2 + d * d * self.count * other.count / count,
        }
    }
}

/// Sample mean and standard error of `(X_T^n)^N` with antithetic pairs.
pub fn estimate_moment(model: &ModelSpec, order: usize, n: usize, paths: usize, seed: u64) -> Result<McEstimate> {
    estimate_moment_with(model, order, n, paths, seed, Sampling::Antithetic)
}

pub fn estimate_moment_with(
    model: &ModelSpec,
    order: usize,
    n: usize,
    paths: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<McEstimate> {
    if paths < 2 {
        return Err(Error::invalid("Monte Carlo needs at least 2 paths"));
    }
    let sampler = GridSampler::new(model, n)?;
    let draws = match sampling {
        Sampling::Plain => paths,
        Sampling::Antithetic => paths.div_ceil(2),
    };
    let blocks = draws.div_ceil(BLOCK);
    let parts = map_range(blocks, |b| {
        let mut acc = Moments::default();
        for i in b * BLOCK..((b + 1) * BLOCK).min(draws) {
            let mut path = sampler.path(seed, i as u64);
            let x = powi(scheme_terminal(&path, model), order as i32);
            let v = match sampling {
                Sampling::Plain => x,
                Sampling::Antithetic => {
                    path.negate();
                    0.5 * (x + powi(scheme_terminal(&path, model), order as i32))
                }
            };
            acc.push(v);
        }
        acc
    });
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    let var = if total.count > 1.0 { total.m2 / (total.count - 1.0) } else { 0.0 };
    let simulated = match sampling {
        Sampling::Plain => draws,
        Sampling::Antithetic => 2 * draws,
    };
    Ok(McEstimate { mean: total.mean, std_error: sqrt(var / total.count), paths: simulated, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::VolFn;
    use crate::kernel::integrated_k;
    use crate::moments::discrete_moment_wick;

    fn model(h: f64, rho: f64, f: VolFn) -> ModelSpec {
        ModelSpec::new(h, rho, 1.0, f).unwrap()
    }

    fn within(est: f64, se: f64, want: f64, k: f64) -> bool {
        (est - want).abs() <= k * se
    }

    #[test]
    fn brownian_case_is_cumulative_sum() {
        let m = model(0.5, 1.0, VolFn::Linear { c1: 1.0 });
        let s = GridSampler::new(&m, 8).unwrap();
        for i in 0..20 {
            let p = s.path(3, i);
            let mut w = 0.0;
            for k in 0..8 {
                assert!((p.hat_w[k] - w).abs() < 1e-12);
                w += p.dw[k];
            }
            assert!((p.hat_w_terminal - w).abs() < 1e-12);
        }
    }

    #[test]
    fn reproducible_streams() {
        let m = model(0.2, 0.5, VolFn::Linear { c1: 1.0 });
        let a = estimate_moment(&m, 2, 8, 1000, 9).unwrap();
        let b = estimate_moment(&m, 2, 8, 1000, 9).unwrap();
        assert_eq!(a, b);
        let c = estimate_moment(&m, 2, 8, 1000, 10).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn terminal_variance_and_cross_covariance() {
        let h = 0.3;
        let m = model(h, 1.0, VolFn::Linear { c1: 1.0 });
        let s = GridSampler::new(&m, 4).unwrap();
        let (mut vv, mut vw, mut v2, mut vw2) = (0.0, 0.0, 0.0, 0.0);
        let paths = 100_000;
        for i in 0..paths {
            let p = s.path(1, i);
            let w: f64 = p.dw.iter().sum();
            let a = p.hat_w_terminal * p.hat_w_terminal;
            let b = p.hat_w_terminal * w;
            vv += a;
            v2 += a * a;
            vw += b;
            vw2 += b * b;
        }
        let nf = paths as f64;
        let (mv, mw) = (vv / nf, vw / nf);
        let sev = sqrt((v2 / nf - mv * mv) / nf);
        let sew = sqrt((vw2 / nf - mw * mw) / nf);
        assert!(within(mv, sev, crate::math::powf(1.0, 2.0 * h) / (2.0 * h), 4.0), "{mv}");
        assert!(within(mw, sew, integrated_k(1.0, 0.0, 1.0, m.hurst), 4.0), "{mw}");
    }

    #[test]
    fn constant_volatility_gives_brownian_terminal() {
        let m = model(0.2, 0.6, VolFn::Exponential { c2: 1.5, c3: 0.0 });
        let s = GridSampler::new(&m, 5).unwrap();
        let p = s.path(0, 0);
        let b: f64 = (0..5).map(|i| 0.6 * p.dw[i] + 0.8 * p.dw_perp[i]).sum();
        assert!((scheme_terminal(&p, &m) - 1.5 * b).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_steps() {
        let m = ModelSpec::new(0.3, 1.0, 1.0, VolFn::Linear { c1: 1.0 }).unwrap();
        let p = GridPath { hat_w: vec![0.0, 0.7], hat_w_terminal: 0.1, dw: vec![0.2, -0.5], dw_perp: vec![9.0, 9.0] };
        assert!((scheme_terminal(&p, &m) - (0.7 * -0.5)).abs() < 1e-15);
    }

    #[test]
    fn first_moment_is_zero() {
        let m = model(0.2, 0.7, VolFn::Exponential { c2: 1.0, c3: 0.4 });
        let e = estimate_moment_with(&m, 1, 8, 20_000, 5, Sampling::Plain).unwrap();
        assert!(within(e.mean, e.std_error, 0.0, 4.0));
    }

    #[test]
    fn antithetic_matches_plain_and_oracle() {
        let m = model(0.3, 0.8, VolFn::Exponential { c2: 1.0, c3: 0.5 });
        let oracle = discrete_moment_wick(&m, 2, 8).unwrap().value;
        let plain = estimate_moment_with(&m, 2, 8, 100_000, 11, Sampling::Plain).unwrap();
        let anti = estimate_moment_with(&m, 2, 8, 100_000, 11, Sampling::Antithetic).unwrap();
        assert!(within(plain.mean, plain.std_error, oracle, 4.0));
        assert!(within(anti.mean, anti.std_error, oracle, 4.0));
        let joint = sqrt(plain.std_error * plain.std_error + anti.std_error * anti.std_error);
        assert!(within(plain.mean, joint, anti.mean, 4.0));
    }

    #[test]
    fn terminal_marginal_passes_ks() {
        let h = 0.2;
        let m = model(h, 1.0, VolFn::Linear { c1: 1.0 });
        let s = GridSampler::new(&m, 8).unwrap();
        let scale = sqrt(1.0 / (2.0 * h));
        let mut xs: Vec<f64> = (0..10_000).map(|i| s.path(77, i).hat_w_terminal / scale).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nf = xs.len() as f64;
        let mut d: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let cdf = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2);
            d = d.max((cdf - i as f64 / nf).abs()).max(((i + 1) as f64 / nf - cdf).abs());
        }
        assert!(d < 1.6276 / sqrt(nf), "KS statistic {d}");
    }
}
