//! Forward uncertainty propagation through the unrolled network.
//!
//! Weights are elementwise Gaussian; the layer belief over the iterate is a
//! componentwise spike-and-slab. One layer is: (i) mix the belief through the
//! Gaussian matrix `S` and approximate the result as Gaussian via its exact
//! marginal mean and an (optionally exact) marginal variance, (ii) add the
//! Gaussian input-layer vector `b`, (iii) push each component through the
//! soft-threshold moment transform.

use crate::dist::{
    soft_threshold_gauss_parts, spike_slab_mean_var, SpikeSlab1, SPIKE_EPS,
};
use crate::mat::Mat;
use crate::scalar::Dual2;
use alloc::vec;
use alloc::vec::Vec;

/// Elementwise Gaussian matrix: means and variances of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMat {
    pub m: Mat,
    pub v: Mat,
}

impl GaussianMat {
    pub fn new(m: Mat, v: Mat) -> Self {
        assert_eq!(m.rows(), v.rows(), "mean/variance shape mismatch");
        assert_eq!(m.cols(), v.cols(), "mean/variance shape mismatch");
        assert!(v.data().iter().all(|&x| x >= 0.0), "negative weight variance");
        GaussianMat { m, v }
    }

    /// Point-mass weights (all variances zero).
    pub fn certain(m: Mat) -> Self {
        let v = Mat::zeros(m.rows(), m.cols());
        GaussianMat { m, v }
    }

    pub fn rows(&self) -> usize {
        self.m.rows()
    }

    pub fn cols(&self) -> usize {
        self.m.cols()
    }
}

/// Componentwise spike-and-slab belief over a length-D vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeSlabVec {
    pub omega: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl SpikeSlabVec {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn component(&self, d: usize) -> SpikeSlab1 {
        SpikeSlab1 { omega: self.omega[d], m: self.m[d], v: self.v[d] }
    }
}

/// Componentwise Gaussian vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussVec {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl GaussVec {
    pub fn len(&self) -> usize {
        self.m.len()
    }
}

/// How the variance of the mixed belief `S beta` is accumulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MomentMode {
    /// Squared slab-weight accumulation:
    /// `sum_j [M^2 (1-w)^2 v + (1-w)^2 m^2 V + V (1-w)^2 v]`.
    #[default]
    Approx,
    /// Exact product moments per term:
    /// `Var(s*xi) = E[s]^2 Var(xi) + V E[xi^2]`, with
    /// `Var(xi) = (1-w)(v + w m^2)` and `E[xi^2] = (1-w)(v + m^2)`.
    Exact,
}

/// Gaussian moments of `b = W y` for a deterministic observation:
/// `m_d = sum_k y_k M_dk`, `v_d = sum_k y_k^2 V_dk`.
pub fn input_layer(w: &GaussianMat, y: &[f64]) -> GaussVec {
    assert_eq!(w.cols(), y.len(), "observation dimension mismatch");
    let d = w.rows();
    let mut m = vec![0.0; d];
    let mut v = vec![0.0; d];
    for i in 0..d {
        let (mut ma, mut va) = (0.0, 0.0);
        for ((&yk, &mw), &vw) in y.iter().zip(w.m.row(i)).zip(w.v.row(i)) {
            ma += yk * mw;
            va += yk * yk * vw;
        }
        m[i] = ma;
        v[i] = va;
    }
    GaussVec { m, v }
}

/// Per-component slab-moment factors used by the mixing step and its gradient.
pub(crate) struct MixFactors {
    /// `E[xi] = (1-w) m`, zero for (near-)pure spikes.
    pub g: Vec<f64>,
    /// `(1-w)^2 v`.
    pub q: Vec<f64>,
    /// `(1-w)^2 (m^2 + v)`.
    pub r: Vec<f64>,
    /// `E[xi^2] = (1-w)(m^2 + v)`.
    pub u: Vec<f64>,
    /// `Var(xi) = (1-w)(v + w m^2)`.
    pub varxi: Vec<f64>,
    /// Components treated as exact spikes.
    pub skip: Vec<bool>,
}

pub(crate) fn mix_factors(beta: &SpikeSlabVec) -> MixFactors {
    let n = beta.len();
    let mut f = MixFactors {
        g: vec![0.0; n],
        q: vec![0.0; n],
        r: vec![0.0; n],
        u: vec![0.0; n],
        varxi: vec![0.0; n],
        skip: vec![false; n],
    };
    for j in 0..n {
        let omega = beta.omega[j];
        let slab = 1.0 - omega;
        if slab < SPIKE_EPS {
            f.skip[j] = true;
            continue;
        }
        let (m, v) = (beta.m[j], beta.v[j]);
        f.g[j] = slab * m;
        f.q[j] = slab * slab * v;
        f.r[j] = slab * slab * (m * m + v);
        f.u[j] = slab * (m * m + v);
        f.varxi[j] = slab * (v + omega * m * m);
    }
    f
}

pub(crate) fn mix_with_factors(s: &GaussianMat, f: &MixFactors, mode: MomentMode) -> GaussVec {
    let d = s.rows();
    let mut out = GaussVec { m: vec![0.0; d], v: vec![0.0; d] };
    for i in 0..d {
        let ms = s.m.row(i);
        let vs = s.v.row(i);
        let (mut acc_m, mut acc_v) = (0.0, 0.0);
        for j in 0..f.g.len() {
            if f.skip[j] {
                continue;
            }
            let m_ij = ms[j];
            acc_m += m_ij * f.g[j];
            acc_v += match mode {
                MomentMode::Approx => m_ij * m_ij * f.q[j] + vs[j] * f.r[j],
                MomentMode::Exact => m_ij * m_ij * f.varxi[j] + vs[j] * f.u[j],
            };
        }
        out.m[i] = acc_m;
        out.v[i] = acc_v;
    }
    out
}

/// Marginal Gaussian moments of `S beta` for independent Gaussian `S` and
/// spike-and-slab `beta`. Panics on shape mismatch.
pub fn spike_slab_matvec(s: &GaussianMat, beta: &SpikeSlabVec, mode: MomentMode) -> GaussVec {
    assert_eq!(s.cols(), beta.len(), "matvec dimension mismatch");
    mix_with_factors(s, &mix_factors(beta), mode)
}

/// Componentwise sum of independent Gaussians.
pub fn add_gauss(a: &GaussVec, b: &GaussVec) -> GaussVec {
    assert_eq!(a.len(), b.len(), "length mismatch");
    GaussVec {
        m: a.m.iter().zip(&b.m).map(|(&x, &y)| x + y).collect(),
        v: a.v.iter().zip(&b.v).map(|(&x, &y)| x + y).collect(),
    }
}

/// Componentwise soft-threshold moment transform of a Gaussian vector.
pub(crate) fn threshold_layer(c: &GaussVec, lambda: f64) -> SpikeSlabVec {
    let n = c.len();
    let mut out = SpikeSlabVec { omega: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] };
    for i in 0..n {
        let (omega, m, v) = soft_threshold_gauss_parts::<f64>(c.m[i], c.v[i], lambda);
        out.omega[i] = omega;
        out.m[i] = m;
        out.v[i] = v;
    }
    out
}

/// As [`threshold_layer`], also returning the partial derivatives of each
/// `(omega, m, v)` with respect to the input `(mean, variance)`, laid out as
/// `[dw/dm, dw/dv, dm/dm, dm/dv, dv/dm, dv/dv]`. The values are bit-identical
/// to the plain path.
pub(crate) fn threshold_layer_traced(
    c: &GaussVec,
    lambda: f64,
) -> (SpikeSlabVec, Vec<[f64; 6]>) {
    let n = c.len();
    let mut out = SpikeSlabVec { omega: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] };
    let mut partials = vec![[0.0; 6]; n];
    for i in 0..n {
        let (omega, m, v) = soft_threshold_gauss_parts::<Dual2>(
            Dual2::var_x(c.m[i]),
            Dual2::var_y(c.v[i]),
            lambda,
        );
        out.omega[i] = omega.re;
        out.m[i] = m.re;
        out.v[i] = v.re;
        partials[i] = [omega.d[0], omega.d[1], m.d[0], m.d[1], v.d[0], v.d[1]];
    }
    (out, partials)
}

/// Propagates the observation through `layers` unrolled iterations and
/// returns the spike-and-slab belief over the output.
pub fn bayeslista_forward(
    w: &GaussianMat,
    s: &GaussianMat,
    y: &[f64],
    lambda: f64,
    layers: usize,
    mode: MomentMode,
) -> SpikeSlabVec {
    assert_eq!(s.rows(), w.rows(), "W/S dimension mismatch");
    assert_eq!(s.cols(), w.rows(), "S must be square over the target dimension");
    let b = input_layer(w, y);
    let mut beta = threshold_layer(&b, lambda);
    for _ in 0..layers {
        let e = spike_slab_matvec(s, &beta, mode);
        let c = add_gauss(&b, &e);
        beta = threshold_layer(&c, lambda);
    }
    beta
}

/// Componentwise predictive mean and variance of the output belief. The mean
/// is the point prediction; the variance drives uncertainty sampling.
pub fn predictive_mean_var(out: &SpikeSlabVec) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; out.len()];
    let mut var = vec![0.0; out.len()];
    for d in 0..out.len() {
        let (m, v) = spike_slab_mean_var(&out.component(d));
        mean[d] = m;
        var[d] = v;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lista::{lista_forward, ListaModel};
    use crate::rng::{gauss, seeded, uniform};

    fn random_net(d: usize, k: usize, vscale: f64, seed: u64) -> (GaussianMat, GaussianMat) {
        let mut r = seeded(seed, 0);
        let wm = Mat::from_fn(d, k, |_, _| gauss(&mut r));
        let wv = Mat::from_fn(d, k, |_, _| vscale * uniform(&mut r));
        let sm = Mat::from_fn(d, d, |_, _| 0.5 * gauss(&mut r));
        let sv = Mat::from_fn(d, d, |_, _| vscale * uniform(&mut r));
        (GaussianMat::new(wm, wv), GaussianMat::new(sm, sv))
    }

    #[test]
    fn input_layer_cases() {
        let w = GaussianMat::new(
            Mat::from_vec(1, 2, vec![1.0, 2.0]),
            Mat::from_vec(1, 2, vec![0.1, 0.2]),
        );
        let out = input_layer(&w, &[3.0, 4.0]);
        assert!((out.m[0] - 11.0).abs() < 1e-12);
        assert!((out.v[0] - 4.1).abs() < 1e-12);

        let zero = input_layer(&w, &[0.0, 0.0]);
        assert_eq!(zero.m, vec![0.0]);
        assert_eq!(zero.v, vec![0.0]);

        let certain = GaussianMat::certain(Mat::from_vec(1, 2, vec![1.0, 2.0]));
        let out = input_layer(&certain, &[3.0, 4.0]);
        assert_eq!(out.v, vec![0.0]);
        assert!((out.m[0] - 11.0).abs() < 1e-12);
    }

    #[test]
    fn input_layer_matches_monte_carlo() {
        let w = GaussianMat::new(
            Mat::from_vec(1, 2, vec![1.0, 2.0]),
            Mat::from_vec(1, 2, vec![0.1, 0.2]),
        );
        let y = [3.0, 4.0];
        let mut r = seeded(60, 0);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let w0 = 1.0 + libm::sqrt(0.1) * gauss(&mut r);
            let w1 = 2.0 + libm::sqrt(0.2) * gauss(&mut r);
            let b = y[0] * w0 + y[1] * w1;
            s1 += b;
            s2 += b * b;
        }
        let mc_m = s1 / n as f64;
        let mc_v = s2 / n as f64 - mc_m * mc_m;
        let out = input_layer(&w, &y);
        assert!((out.m[0] - mc_m).abs() < 3.0 * libm::sqrt(4.1 / n as f64));
        assert!((out.v[0] - mc_v).abs() < 3.0 * 4.1 * libm::sqrt(2.0 / n as f64));
    }

    #[test]
    fn matvec_all_spike_is_zero() {
        let (_, s) = random_net(4, 3, 0.1, 1);
        let beta = SpikeSlabVec {
            omega: vec![1.0; 4],
            m: vec![0.0; 4],
            v: vec![0.0; 4],
        };
        let out = spike_slab_matvec(&s, &beta, MomentMode::Approx);
        assert_eq!(out.m, vec![0.0; 4]);
        assert_eq!(out.v, vec![0.0; 4]);
    }

    #[test]
    fn matvec_scalar_case_matches_printed_formula() {
        let s = GaussianMat::new(Mat::from_vec(1, 1, vec![1.0]), Mat::from_vec(1, 1, vec![0.1]));
        let beta = SpikeSlabVec { omega: vec![0.5], m: vec![2.0], v: vec![1.0] };
        let out = spike_slab_matvec(&s, &beta, MomentMode::Approx);
        assert!((out.m[0] - 1.0).abs() < 1e-15);
        assert!((out.v[0] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn matvec_deterministic_weights_pure_slab() {
        // V = 0 and omega = 0: exact matrix-vector product, variance sum M^2 v.
        let m = Mat::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]);
        let s = GaussianMat::certain(m.clone());
        let beta = SpikeSlabVec {
            omega: vec![0.0, 0.0],
            m: vec![0.7, -0.3],
            v: vec![0.2, 0.4],
        };
        for mode in [MomentMode::Approx, MomentMode::Exact] {
            let out = spike_slab_matvec(&s, &beta, mode);
            assert!((out.m[0] - (1.0 * 0.7 + -2.0 * -0.3)).abs() < 1e-15);
            assert!((out.m[1] - (0.5 * 0.7 + 3.0 * -0.3)).abs() < 1e-15);
            assert!((out.v[0] - (1.0 * 0.2 + 4.0 * 0.4)).abs() < 1e-14);
            assert!((out.v[1] - (0.25 * 0.2 + 9.0 * 0.4)).abs() < 1e-14);
        }
    }

    #[test]
    fn matvec_exact_mode_matches_product_monte_carlo() {
        // Var(s*xi) for independent Gaussian s and spike-and-slab xi.
        let s = GaussianMat::new(
            Mat::from_vec(1, 1, vec![0.8]),
            Mat::from_vec(1, 1, vec![0.3]),
        );
        let (omega, m, v) = (0.4, 1.5, 0.6);
        let beta = SpikeSlabVec { omega: vec![omega], m: vec![m], v: vec![v] };
        let exact = spike_slab_matvec(&s, &beta, MomentMode::Exact);

        let mut r = seeded(61, 0);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let sw = 0.8 + libm::sqrt(0.3) * gauss(&mut r);
            let xi = if uniform(&mut r) < omega {
                0.0
            } else {
                m + libm::sqrt(v) * gauss(&mut r)
            };
            let e = sw * xi;
            s1 += e;
            s2 += e * e;
        }
        let mc_m = s1 / n as f64;
        let mc_v = s2 / n as f64 - mc_m * mc_m;
        assert!((exact.m[0] - mc_m).abs() < 3.0 * libm::sqrt(mc_v / n as f64));
        assert!((exact.v[0] - mc_v).abs() < 3.0 * mc_v * libm::sqrt(7.0 / n as f64));
    }

    #[test]
    fn add_gauss_cases() {
        let a = GaussVec { m: vec![1.0], v: vec![2.0] };
        let b = GaussVec { m: vec![3.0], v: vec![4.0] };
        let ab = add_gauss(&a, &b);
        assert_eq!((ab.m[0], ab.v[0]), (4.0, 6.0));
        let ba = add_gauss(&b, &a);
        assert_eq!(ab, ba);
        let zero = GaussVec { m: vec![0.0], v: vec![0.0] };
        assert_eq!(add_gauss(&a, &zero), a);
    }

    #[test]
    fn forward_zero_observation_is_all_spike() {
        let (w, s) = random_net(5, 3, 0.2, 2);
        let out = bayeslista_forward(&w, &s, &[0.0; 3], 0.1, 3, MomentMode::Approx);
        assert_eq!(out.omega, vec![1.0; 5]);
        assert_eq!(out.m, vec![0.0; 5]);
        assert_eq!(out.v, vec![0.0; 5]);
    }

    #[test]
    fn forward_collapses_to_deterministic_network() {
        let mut r = seeded(63, 0);
        let d = 8;
        let k = 5;
        let model = ListaModel::random(d, k, 0.1, 3, 63);
        let w = GaussianMat::certain(model.w.clone());
        let s = GaussianMat::certain(model.s.clone());
        for _ in 0..10 {
            let y: Vec<f64> = (0..k).map(|_| gauss(&mut r)).collect();
            let point = lista_forward(&model, &y);
            for mode in [MomentMode::Approx, MomentMode::Exact] {
                let out = bayeslista_forward(&w, &s, &y, 0.1, 3, mode);
                for i in 0..d {
                    assert!(out.omega[i] == 0.0 || out.omega[i] == 1.0);
                    assert_eq!(out.v[i], 0.0);
                    if point[i] == 0.0 {
                        assert_eq!(out.omega[i], 1.0);
                    } else {
                        assert_eq!(out.omega[i], 0.0);
                        assert!((out.m[i] - point[i]).abs() <= 1e-10);
                    }
                }
            }
        }
    }

    /// Samples the network with weights drawn once per draw, then run
    /// deterministically; returns per-component draws.
    fn mc_forward_samples(
        w: &GaussianMat,
        s: &GaussianMat,
        y: &[f64],
        lambda: f64,
        layers: usize,
        n: usize,
        seed: u64,
    ) -> Vec<Vec<f64>> {
        let d = w.rows();
        let k = w.cols();
        let mut r = seeded(seed, 0);
        let mut samples = vec![Vec::with_capacity(n); d];
        for _ in 0..n {
            let wm =
                Mat::from_fn(d, k, |i, j| w.m[(i, j)] + libm::sqrt(w.v[(i, j)]) * gauss(&mut r));
            let sm =
                Mat::from_fn(d, d, |i, j| s.m[(i, j)] + libm::sqrt(s.v[(i, j)]) * gauss(&mut r));
            let model = ListaModel { w: wm, s: sm, lambda, layers };
            for (i, x) in lista_forward(&model, y).into_iter().enumerate() {
                samples[i].push(x);
            }
        }
        samples
    }

    #[test]
    fn forward_single_threshold_matches_monte_carlo() {
        // With no mixing layers the propagated law is exact: `W y` is exactly
        // Gaussian and the threshold transform is closed-form.
        let d = 3;
        let k = 2;
        let (w, s) = random_net(d, k, 0.5, 64);
        let y = [0.9, -1.4];
        let lambda = 0.3;
        let out = bayeslista_forward(&w, &s, &y, lambda, 0, MomentMode::Exact);
        let (pred_m, pred_v) = predictive_mean_var(&out);

        let n = 400_000;
        let samples = mc_forward_samples(&w, &s, &y, lambda, 0, n, 65);
        for i in 0..d {
            let f = crate::testutil::summarize(&samples[i]);
            let zeros = samples[i].iter().filter(|&&x| x == 0.0).count();
            let mc_omega = zeros as f64 / n as f64;
            let se_omega = libm::sqrt(out.omega[i] * (1.0 - out.omega[i]) / n as f64);
            assert!(
                (pred_m[i] - f.mean).abs() < 3.0 * f.se_mean,
                "component {i}: mean {} vs mc {}",
                pred_m[i],
                f.mean
            );
            assert!(
                (pred_v[i] - f.var).abs() < 3.0 * f.se_var,
                "component {i}: var {} vs mc {}",
                pred_v[i],
                f.var
            );
            assert!((out.omega[i] - mc_omega).abs() < 3.0 * se_omega + 1e-9);
        }
    }

    #[test]
    fn forward_deep_net_tracks_monte_carlo() {
        // With mixing layers the propagation assumes layerwise independence
        // (the input-layer vector is reused by every layer), so the match
        // carries a small systematic error that shrinks with the weight
        // variances. Allowance calibrated at twice the observed deviation.
        let d = 3;
        let k = 2;
        let vscale = 1e-4;
        let (w, s) = random_net(d, k, vscale, 64);
        let y = [0.9, -1.4];
        let lambda = 0.1;
        let layers = 2;
        let out = bayeslista_forward(&w, &s, &y, lambda, layers, MomentMode::Exact);
        let (pred_m, pred_v) = predictive_mean_var(&out);

        let n = 200_000;
        let samples = mc_forward_samples(&w, &s, &y, lambda, layers, n, 65);
        for i in 0..d {
            let f = crate::testutil::summarize(&samples[i]);
            assert!(
                (pred_m[i] - f.mean).abs() < 3.0 * f.se_mean + 2e-4,
                "component {i}: mean {} vs mc {}",
                pred_m[i],
                f.mean
            );
            assert!(
                (pred_v[i] - f.var).abs() < 3.0 * f.se_var + 4e-4,
                "component {i}: var {} vs mc {}",
                pred_v[i],
                f.var
            );
        }
    }

    #[test]
    fn predictive_mean_var_cases() {
        let all_spike = SpikeSlabVec { omega: vec![1.0; 2], m: vec![5.0; 2], v: vec![2.0; 2] };
        let (m, v) = predictive_mean_var(&all_spike);
        assert_eq!(m, vec![0.0; 2]);
        assert_eq!(v, vec![0.0; 2]);

        let pure_slab = SpikeSlabVec { omega: vec![0.0], m: vec![1.5], v: vec![0.3] };
        let (m, v) = predictive_mean_var(&pure_slab);
        assert_eq!((m[0], v[0]), (1.5, 0.3));

        let half = SpikeSlabVec { omega: vec![0.5], m: vec![2.0], v: vec![1.0] };
        let (m, v) = predictive_mean_var(&half);
        assert_eq!((m[0], v[0]), (1.0, 1.5));
    }

    #[test]
    fn forward_is_deterministic_and_valid() {
        let (w, s) = random_net(6, 4, 0.5, 66);
        let mut r = seeded(67, 0);
        for _ in 0..20 {
            let y: Vec<f64> = (0..4).map(|_| gauss(&mut r)).collect();
            let a = bayeslista_forward(&w, &s, &y, 0.1, 4, MomentMode::Approx);
            let b = bayeslista_forward(&w, &s, &y, 0.1, 4, MomentMode::Approx);
            assert_eq!(a, b);
            for i in 0..a.len() {
                assert!((0.0..=1.0).contains(&a.omega[i]));
                assert!(a.v[i] >= 0.0);
            }
        }
    }

    #[test]
    fn first_layer_spike_monotone_in_lambda() {
        let (w, s) = random_net(5, 3, 0.3, 68);
        let y = [0.4, -0.9, 1.3];
        let mut prev = vec![-1.0; 5];
        for i in 0..40 {
            let lambda = i as f64 * 0.05;
            let out = bayeslista_forward(&w, &s, &y, lambda, 0, MomentMode::Approx);
            for d in 0..5 {
                assert!(out.omega[d] >= prev[d] - 1e-15);
                prev[d] = out.omega[d];
            }
        }
    }
}
