#![cfg_attr(not(any(test, feature = "std")), no_std)]

//! Sparse coding solvers and an uncertainty-propagating unrolled network.
//!
//! The crate implements four estimators for the sparse linear model
//! `y = X beta + noise`:
//!
//! - [`solvers`]: classic ISTA and FISTA with fixed, spectrally scaled weights;
//! - [`lista`]: the unrolled network with the same structure and learned
//!   weights, trained by stochastic gradient descent;
//! - [`bayeslista`]: the same network evaluated over distributions — Gaussian
//!   weights in, spike-and-slab beliefs out — via layerwise moment matching;
//! - [`pbp`]: posterior learning for the Bayesian network by assumed density
//!   filtering on likelihood factors and moment-matched prior incorporation.
//!
//! The crate is `no_std`-compatible (with `alloc`); all float transcendentals
//! go through `libm`, so results are reproducible across platforms. IO, file
//! formats, and the benchmark CLI live in the companion `sparsecode-bench`
//! crate.

extern crate alloc;

pub mod bayeslista;
pub mod dist;
pub mod lista;
pub mod mat;
pub mod pbp;
pub mod rng;
pub mod scalar;
pub mod solvers;
#[cfg(test)]
mod testutil;

pub use mat::Mat;
