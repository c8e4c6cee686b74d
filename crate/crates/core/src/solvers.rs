//! Classic ISTA and FISTA solvers with fixed, spectrally scaled weights.
//!
//! Both solvers run the same unrolled iteration as the learned network:
//! `b = W y`, then `beta <- h_theta(b + S beta)` for a fixed number of
//! iterations, with `W = X^T / nu` and `S = I - X^T X / nu` where `nu` is the
//! largest eigenvalue of `X^T X`. With those weights the iteration is the
//! proximal gradient step for `0.5 ||X beta - y||^2 + theta * nu * ||beta||_1`.

use crate::dist::soft_threshold;
use crate::lista::unrolled_forward;
use crate::mat::{dot, norm2, Mat};
use crate::rng;
use alloc::vec::Vec;
use core::fmt;

/// loop cap and relative tolerance for the power iteration.
const POWER_MAX_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-8;
/// Fixed seed for the power iteration start vector.
const POWER_SEED: u64 = 0x5eed_0001;

/// A sparse recovery instance: design matrix (K x D), shrinkage, iteration count.
#[derive(Clone, Debug)]
pub struct Problem {
    pub design: Mat,
    pub lambda: f64,
    pub layers: usize,
}

impl Problem {
    pub fn new(design: Mat, lambda: f64, layers: usize) -> Self {
        assert!(lambda >= 0.0, "negative shrinkage {lambda}");
        assert!(design.rows() >= 1 && design.cols() >= 1);
        Problem { design, lambda, layers }
    }
}

/// Fixed iteration weights: `W` (D x K), `S` (D x D), per-iteration threshold.
#[derive(Clone, Debug)]
pub struct IstaWeights {
    pub w: Mat,
    pub s: Mat,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolverError {
    /// The design matrix has spectral norm zero (all-zero `X`).
    ZeroDesign,
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::ZeroDesign => write!(f, "design matrix is all zero"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SolverError {}

/// Largest eigenvalue of `X^T X` by power iteration with a fixed-seed start
/// vector (relative tolerance 1e-8, 1000 iteration cap).
pub fn spectral_norm_sq(x: &Mat) -> Result<f64, SolverError> {
    let d = x.cols();
    let mut r = rng::seeded(POWER_SEED, 0);
    let mut v: Vec<f64> = (0..d).map(|_| rng::gauss(&mut r)).collect();
    let scale = norm2(&v);
    v.iter_mut().for_each(|e| *e /= scale);

    let mut nu = 0.0;
    for iter in 0..POWER_MAX_ITERS {
        let xv = x.matvec(&v);
        let u = x.matvec_t(&xv); // X^T X v
        let rayleigh = dot(&v, &u);
        let len = norm2(&u);
        if len == 0.0 {
            return Err(SolverError::ZeroDesign);
        }
        v = u;
        v.iter_mut().for_each(|e| *e /= len);
        if iter > 0 && (rayleigh - nu).abs() <= POWER_TOL * rayleigh.abs() {
            return Ok(rayleigh);
        }
        nu = rayleigh;
    }
    Ok(nu)
}

/// Builds the standard ISTA weights for a design matrix:
/// `W = X^T / nu`, `S = I - X^T X / nu`, `theta = lambda`.
pub fn ista_weights(x: &Mat, lambda: f64) -> Result<IstaWeights, SolverError> {
    let nu = spectral_norm_sq(x)?;
    let (k, d) = (x.rows(), x.cols());
    let mut w = Mat::zeros(d, k);
    for i in 0..k {
        for j in 0..d {
            w[(j, i)] = x[(i, j)] / nu;
        }
    }
    let mut s = Mat::zeros(d, d);
    for j1 in 0..d {
        for j2 in 0..d {
            let mut acc = 0.0;
            for i in 0..k {
                acc += x[(i, j1)] * x[(i, j2)];
            }
            s[(j1, j2)] = if j1 == j2 { 1.0 - acc / nu } else { -acc / nu };
        }
    }
    Ok(IstaWeights { w, s, theta: lambda })
}

/// Runs the fixed-weight iteration for `layers` steps and returns the final
/// iterate. Dimension mismatches panic.
pub fn ista_solve(p: &Problem, y: &[f64]) -> Result<Vec<f64>, SolverError> {
    let weights = ista_weights(&p.design, p.lambda)?;
    Ok(ista_solve_with(&weights, p.layers, y))
}

/// As [`ista_solve`] with precomputed weights, for solving many right-hand sides.
pub fn ista_solve_with(weights: &IstaWeights, layers: usize, y: &[f64]) -> Vec<f64> {
    unrolled_forward(&weights.w, &weights.s, weights.theta, layers, y)
}

/// FISTA: the same iteration applied at an extrapolated point, with the
/// standard momentum sequence `t_1 = 1`, `t_{k+1} = (1 + sqrt(1 + 4 t_k^2))/2`.
pub fn fista_solve(p: &Problem, y: &[f64]) -> Result<Vec<f64>, SolverError> {
    let weights = ista_weights(&p.design, p.lambda)?;
    Ok(fista_solve_with(&weights, p.layers, y))
}

pub fn fista_solve_with(weights: &IstaWeights, layers: usize, y: &[f64]) -> Vec<f64> {
    let b = weights.w.matvec(y);
    let mut beta_prev: Vec<f64> =
        b.iter().map(|&bi| soft_threshold(bi, weights.theta)).collect();
    if layers == 0 {
        return beta_prev;
    }
    let mut z = beta_prev.clone();
    let mut t = 1.0;
    for _ in 0..layers {
        let sz = weights.s.matvec(&z);
        let beta: Vec<f64> = b
            .iter()
            .zip(&sz)
            .map(|(&bi, &si)| soft_threshold(bi + si, weights.theta))
            .collect();
        let t_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * t * t));
        let coef = (t - 1.0) / t_next;
        z = beta
            .iter()
            .zip(&beta_prev)
            .map(|(&bn, &bp)| bn + coef * (bn - bp))
            .collect();
        beta_prev = beta;
        t = t_next;
    }
    beta_prev
}

/// `0.5 ||X beta - y||^2 + alpha ||beta||_1`.
///
/// The fixed-weight iteration with threshold `theta` minimizes this objective
/// at `alpha = theta * nu`.
pub fn lasso_objective(x: &Mat, y: &[f64], beta: &[f64], alpha: f64) -> f64 {
    let r = x.matvec(beta);
    let fit: f64 = r.iter().zip(y).map(|(&ri, &yi)| (ri - yi) * (ri - yi)).sum();
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    0.5 * fit + alpha * l1
}
