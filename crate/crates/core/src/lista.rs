//! The unrolled soft-thresholding network with learned weights.
//!
//! Forward: `b = W y`, `beta_0 = h_lambda(b)`, then
//! `beta_l = h_lambda(b + S beta_{l-1})` for `l = 1..L`. `W` and `S` are tied
//! across layers and trained by per-sample stochastic gradient descent on the
//! squared reconstruction error, with the threshold subgradient taken as 0 on
//! `[-lambda, lambda]` and 1 outside.

use crate::dist::soft_threshold;
use crate::mat::Mat;
use crate::rng::{self, stream};
use crate::solvers::{ista_weights, SolverError};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, Debug)]
pub struct ListaModel {
    pub w: Mat,
    pub s: Mat,
    pub lambda: f64,
    pub layers: usize,
}

impl ListaModel {
    /// Warm start from the fixed solver weights for a known design matrix.
    pub fn from_design(x: &Mat, lambda: f64, layers: usize) -> Result<Self, SolverError> {
        let weights = ista_weights(x, lambda)?;
        Ok(ListaModel { w: weights.w, s: weights.s, lambda, layers })
    }

    /// Gaussian initialization with entry variances `1/K` for `W` and `1/D`
    /// for `S`, for when no design matrix is available.
    pub fn random(d: usize, k: usize, lambda: f64, layers: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed, stream::LISTA_INIT);
        let w_sd = libm::sqrt(1.0 / k as f64);
        let w = Mat::from_fn(d, k, |_, _| w_sd * rng::gauss(&mut r));
        let s_sd = libm::sqrt(1.0 / d as f64);
        let s = Mat::from_fn(d, d, |_, _| s_sd * rng::gauss(&mut r));
        ListaModel { w, s, lambda, layers }
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    pub fn obs_dim(&self) -> usize {
        self.w.cols()
    }
}

/// Shared forward unroll; also the fixed-weight solver body, so the learned
/// network with solver weights reproduces the solver bit for bit.
pub(crate) fn unrolled_forward(
    w: &Mat,
    s: &Mat,
    lambda: f64,
    layers: usize,
    y: &[f64],
) -> Vec<f64> {
    let b = w.matvec(y);
    let mut beta: Vec<f64> = b.iter().map(|&bi| soft_threshold(bi, lambda)).collect();
    for _ in 0..layers {
        let sb = s.matvec(&beta);
        for (bi, (&b_d, &s_d)) in beta.iter_mut().zip(b.iter().zip(&sb)) {
            *bi = soft_threshold(b_d + s_d, lambda);
        }
    }
    beta
}

/// Runs the network on one observation. Panics on dimension mismatch.
pub fn lista_forward(model: &ListaModel, y: &[f64]) -> Vec<f64> {
    unrolled_forward(&model.w, &model.s, model.lambda, model.layers, y)
}

#[derive(Clone, Copy, Debug)]
pub struct TrainCfg {
    pub epochs: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        TrainCfg { epochs: 50, step: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrainError {
    /// The per-sample loss became non-finite; training aborts.
    NonFiniteLoss { epoch: usize, sample: usize },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::NonFiniteLoss { epoch, sample } => {
                write!(f, "non-finite training loss at epoch {epoch}, sample {sample}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

/// Squared-error loss and its gradients with respect to `W` and `S` for one
/// `(y, target)` pair, by reverse-mode differentiation through the unroll.
fn loss_grad(model: &ListaModel, y: &[f64], target: &[f64]) -> (f64, Mat, Mat) {
    let d = model.dim();
    let lambda = model.lambda;
    let b = model.w.matvec(y);

    // Forward, recording pre-activations and iterates.
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(model.layers + 1);
    let mut betas: Vec<Vec<f64>> = Vec::with_capacity(model.layers + 1);
    acts.push(b.clone());
    betas.push(b.iter().map(|&bi| soft_threshold(bi, lambda)).collect());
    for _ in 0..model.layers {
        let sb = model.s.matvec(betas.last().unwrap());
        let a: Vec<f64> = b.iter().zip(&sb).map(|(&bi, &si)| bi + si).collect();
        betas.push(a.iter().map(|&ai| soft_threshold(ai, lambda)).collect());
        acts.push(a);
    }

    let out = betas.last().unwrap();
    let loss: f64 = out.iter().zip(target).map(|(&o, &t)| (o - t) * (o - t)).sum();

    // Backward pass. `b` feeds every layer, so its adjoint accumulates.
    let mut beta_bar: Vec<f64> =
        out.iter().zip(target).map(|(&o, &t)| 2.0 * (o - t)).collect();
    let mut b_bar = vec![0.0; d];
    let mut grad_s = Mat::zeros(d, d);
    for l in (1..=model.layers).rev() {
        let a = &acts[l];
        let prev = &betas[l - 1];
        let a_bar: Vec<f64> = beta_bar
            .iter()
            .zip(a)
            .map(|(&g, &ai)| if ai.abs() > lambda { g } else { 0.0 })
            .collect();
        for (i, &g) in a_bar.iter().enumerate() {
            if g != 0.0 {
                b_bar[i] += g;
                for (acc, &p) in grad_s.row_mut(i).iter_mut().zip(prev) {
                    *acc += g * p;
                }
            }
        }
        beta_bar = model.s.matvec_t(&a_bar);
    }
    for i in 0..d {
        if acts[0][i].abs() > lambda {
            b_bar[i] += beta_bar[i];
        }
    }
    let mut grad_w = Mat::zeros(d, y.len());
    for (i, &g) in b_bar.iter().enumerate() {
        if g != 0.0 {
            for (acc, &yk) in grad_w.row_mut(i).iter_mut().zip(y) {
                *acc += g * yk;
            }
        }
    }
    (loss, grad_w, grad_s)
}

/// Trains by SGD (minibatch 1), reshuffling per epoch with the run seed, and
/// calls `on_epoch` after each full sweep.
pub fn lista_train_with(
    obs: &Mat,
    targets: &Mat,
    init: &ListaModel,
    cfg: TrainCfg,
    mut on_epoch: impl FnMut(usize, &ListaModel),
) -> Result<ListaModel, TrainError> {
    assert_eq!(obs.rows(), targets.rows(), "observation/target count mismatch");
    assert_eq!(obs.cols(), init.obs_dim(), "observation dimension mismatch");
    assert_eq!(targets.cols(), init.dim(), "target dimension mismatch");
    let n = obs.rows();
    assert!(n >= 1, "empty training set");

    let mut model = init.clone();
    for epoch in 0..cfg.epochs {
        let mut r = rng::seeded(cfg.seed, stream::LISTA_SHUFFLE + epoch as u64);
        for idx in rng::permutation(&mut r, n) {
            let (loss, gw, gs) = loss_grad(&model, obs.row(idx), targets.row(idx));
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, sample: idx });
            }
            for (wv, gv) in model.w.data_mut().iter_mut().zip(gw.data()) {
                *wv -= cfg.step * gv;
            }
            for (sv, gv) in model.s.data_mut().iter_mut().zip(gs.data()) {
                *sv -= cfg.step * gv;
            }
        }
        on_epoch(epoch, &model);
    }
    Ok(model)
}

/// [`lista_train_with`] without an epoch callback.
pub fn lista_train(
    obs: &Mat,
    targets: &Mat,
    init: &ListaModel,
    cfg: TrainCfg,
) -> Result<ListaModel, TrainError> {
    lista_train_with(obs, targets, init, cfg, |_, _| {})
}

/// Mean squared reconstruction error over a dataset.
pub fn mean_loss(model: &ListaModel, obs: &Mat, targets: &Mat) -> f64 {
    let mut total = 0.0;
    for i in 0..obs.rows() {
        let out = lista_forward(model, obs.row(i));
        total += out
            .iter()
            .zip(targets.row(i))
            .map(|(&o, &t)| (o - t) * (o - t))
            .sum::<f64>();
    }
    total / obs.rows() as f64
}
