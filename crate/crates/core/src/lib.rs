//! Numerical laboratory for the weak error of the left-point (Euler) scheme
//! applied to rough volatility models
//!
//! ```text
//! X_t = ∫₀ᵗ f(Ŵ_s) dB_s,   Ŵ_t = ∫₀ᵗ (t−s)^{H−1/2} dW_s,   B = ρW + √(1−ρ²)W^⊥
//! ```
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is on. The
//! `parallel` feature (default) spreads quadrature cells and Monte Carlo
//! paths over a rayon pool; results do not depend on the thread count.
//!
//! Layout:
//! - [`kernel`]: Liouville kernel, grid projection, covariance of Ŵ.
//! - [`gaussian`]: expectations of products of volatility derivatives.
//! - [`words`]: words over {I, J} and their operator expansions.
//! - [`moments`]: exact moments of `X_T` and of the scheme `X_T^n`.
//! - [`simulate`]: exact-law Monte Carlo of the scheme.
//! - [`lab`]: n-sweeps and rate fits.
//! - [`lower_bound`]: the lower-bound constants and rescaled errors.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

mod error;
mod math;
mod parallel;

pub mod gaussian;
pub mod kernel;
pub mod lab;
pub mod linalg;
pub mod lower_bound;
pub mod moments;
pub mod quadrature;
pub mod simulate;
pub mod special;
pub mod words;

pub use error::{Error, Result};
pub use gaussian::{GaussianLaw, Method, Monomial, SymbolicFactor, VolFn};
pub use kernel::{GridSpec, HurstParam};
pub use moments::{
    continuous_moment, discrete_moment_quadrature, discrete_moment_wick, weak_error, ModelSpec,
    MomentMethod, MomentReport, WeakError,
};
pub use simulate::{estimate_moment, sample_grid_paths, scheme_terminal, GridPath, McEstimate};
pub use words::{enumerate_words, expand_word, is_trivial, IntegrandTerm, KernelEdgeMap, Word};
