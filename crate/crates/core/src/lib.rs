//! Monte Carlo laboratory for Itô diffusions stopped at their first exit from
//! shrinking balls.
//!
//! For a diffusion `dX = μ(X) dt + σ(X) dW` started at `x` and a smooth
//! observable `f`, the crate simulates the scaled stopped processes
//! `Yⁿ_t = √n (f(X_{τⁿ ∧ t}) − f(x))`, where `τⁿ` is the first time `X`
//! reaches distance `n^{-1/2}` from `x`, and provides the statistics needed to
//! compare them with their limit laws.
//!
//! The crate is `no_std` and only needs `alloc`. Everything is a pure function
//! of its inputs and an explicit [`StreamKey`], so callers may fan paths out to
//! as many threads as they like and still get bit-identical results.
//!
//! Modules:
//! - [`rng`]: counter-based Philox streams and Gaussian increments;
//! - [`sde`]: models, observables and Euler–Maruyama stepping;
//! - [`exit`]: first-exit detection with bridge and substep corrections;
//! - [`scaling`]: the scaled process families built from simulated paths;
//! - [`reference`]: samplers for the limit laws;
//! - [`stats`]: KS, χ² sphere uniformity, exceedance diagnostics.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub(crate) mod math;

pub mod exit;
pub mod reference;
pub mod rng;
pub mod scaling;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use exit::{detect_exit, Ball, ExitRecord, Method};
pub use rng::{gaussian_increments, StreamKey};
pub use scaling::{RemainderSample, ScaledFddSample};
pub use sde::{Observable, PathGrid, SdeModel};
pub use stats::{Provenance, Rule, TestReport};
