//! Scalar distribution math: Gaussian pdf/cdf, truncated-tail moments, the
//! soft-threshold moment transform, spike-and-slab moments, and the
//! location-scale Student-t density.
//!
//! The soft-threshold transform is the load-bearing piece: pushing a Gaussian
//! through `h_lambda` squeezes the mass on `[-lambda, lambda]` into an exact
//! spike at zero and leaves the two shifted tails as the slab. The slab is
//! projected onto a single (mean, variance) pair, computed exactly from
//! truncated-Gaussian moment identities. The transform is implemented
//! generically over [`Scalar`] so the same code yields values (`f64`) and
//! input derivatives ([`Dual2`]).

use crate::scalar::Scalar;

/// 1 / sqrt(2*pi).
pub(crate) const INV_SQRT_2PI: f64 = 0.3989422804014326779399461;
const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// A slab probability below this is canonicalized to a pure spike.
pub const SPIKE_EPS: f64 = 1e-12;

/// Scalar Gaussian; `var = 0` denotes a point mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gauss1 {
    pub mean: f64,
    pub var: f64,
}

impl Gauss1 {
    pub fn new(mean: f64, var: f64) -> Self {
        assert!(var >= 0.0, "negative variance {var}");
        Gauss1 { mean, var }
    }
}

/// Mixture of a point mass at zero (weight `omega`) and a Gaussian slab.
///
/// When `omega == 1` the slab parameters are canonically `(0, 0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpikeSlab1 {
    pub omega: f64,
    pub m: f64,
    pub v: f64,
}

/// Gamma distribution with shape `a` and rate `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub a: f64,
    pub b: f64,
}

impl GammaParams {
    pub fn new(a: f64, b: f64) -> Self {
        assert!(a > 0.0 && b > 0.0, "gamma parameters must be positive ({a}, {b})");
        GammaParams { a, b }
    }

    pub fn mean(&self) -> f64 {
        self.a / self.b
    }
}

/// `sgn(x) * max(|x| - lambda, 0)`, the proximal operator of the l1 norm.
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Standard normal cdf via the complementary error function.
///
/// The complementary form stays relatively accurate deep into the tails
/// (down to the smallest normal doubles around 1e-308), which the tail-mass
/// computations below rely on.
pub fn std_normal_cdf(x: f64) -> f64 {
    std_normal_cdf_s(x)
}

#[inline]
fn std_normal_cdf_s<S: Scalar>(x: S) -> S {
    S::lift(0.5) * (-x * S::lift(FRAC_1_SQRT_2)).erfc()
}

pub fn std_normal_pdf(x: f64) -> f64 {
    std_normal_pdf_s(x)
}

#[inline]
fn std_normal_pdf_s<S: Scalar>(x: S) -> S {
    S::lift(INV_SQRT_2PI) * (S::lift(-0.5) * x * x).exp()
}

/// Hazard ratio of the standard normal: `pdf(t) / (1 - cdf(t))`.
///
/// Direct evaluation is fine until the tail mass approaches the underflow
/// threshold; beyond that the Mills-ratio continued fraction takes over.
fn hazard<S: Scalar>(t: S) -> S {
    if t.val() > 30.0 {
        // hazard(t) = t + 1/(t + 2/(t + 3/(t + ...)))
        let mut acc = t;
        for k in (1..=12).rev() {
            acc = t + S::lift(k as f64) / acc;
        }
        acc
    } else {
        std_normal_pdf_s(t) / std_normal_cdf_s(-t)
    }
}

#[inline]
fn clamp_nonneg<S: Scalar>(x: S) -> S {
    if x.val() < 0.0 {
        S::lift(0.0)
    } else {
        x
    }
}

/// Pushes `N(mean, var)` through the soft-threshold and returns the resulting
/// spike-and-slab parameters `(omega, m, v)`.
///
/// `omega` is the Gaussian mass on `[-lambda, lambda]`. The slab is the
/// two-component mixture of the lower tail shifted by `+lambda` and the upper
/// tail shifted by `-lambda`, projected to its exact mean and variance.
/// Panics if `lambda < 0` or `var < 0`.
pub fn soft_threshold_gauss(g: Gauss1, lambda: f64) -> SpikeSlab1 {
    let (omega, m, v) = soft_threshold_gauss_parts::<f64>(g.mean, g.var, lambda);
    SpikeSlab1 { omega, m, v }
}

/// Generic body of [`soft_threshold_gauss`]; also evaluated on [`Dual2`]
/// inputs to obtain the partial derivatives of `(omega, m, v)` with respect
/// to the input mean and variance.
pub(crate) fn soft_threshold_gauss_parts<S: Scalar>(mean: S, var: S, lambda: f64) -> (S, S, S) {
    assert!(lambda >= 0.0, "negative shrinkage {lambda}");
    assert!(var.val() >= 0.0, "negative variance {}", var.val());
    let zero = S::lift(0.0);
    let one = S::lift(1.0);

    if var.val() == 0.0 {
        // Point mass: thresholding acts on the mean directly.
        return if mean.val().abs() <= lambda {
            (one, zero, zero)
        } else if mean.val() > 0.0 {
            (zero, mean - S::lift(lambda), zero)
        } else {
            (zero, mean + S::lift(lambda), zero)
        };
    }
    if lambda == 0.0 {
        // Identity transform.
        return (zero, mean, var);
    }

    let sigma = var.sqrt();
    let lam = S::lift(lambda);
    // Standardized interval edges: alpha for -lambda, beta for +lambda.
    let alpha = (-lam - mean) / sigma;
    let beta = (lam - mean) / sigma;
    let p_lo = std_normal_cdf_s(alpha);
    let p_hi = std_normal_cdf_s(-beta);
    let slab = p_lo + p_hi;
    if slab.val() < SPIKE_EPS {
        return (one, zero, zero);
    }
    let omega = clamp_nonneg(one - slab);

    // Lower tail (x < -lambda) shifted by +lambda.
    let (m_lo, v_lo) = if p_lo.val() > 0.0 {
        let h = hazard(-alpha);
        let m = mean - sigma * h + lam;
        let bracket = clamp_nonneg(one - alpha * h - h * h);
        (m, var * bracket)
    } else {
        (zero, zero)
    };
    // Upper tail (x > lambda) shifted by -lambda.
    let (m_hi, v_hi) = if p_hi.val() > 0.0 {
        let h = hazard(beta);
        let m = mean + sigma * h - lam;
        let bracket = clamp_nonneg(one + beta * h - h * h);
        (m, var * bracket)
    } else {
        (zero, zero)
    };

    let w_lo = p_lo / slab;
    let w_hi = p_hi / slab;
    let m = w_lo * m_lo + w_hi * m_hi;
    // Two-component mixture variance in its cancellation-free form: the
    // between-component spread is exactly w_lo w_hi (m_lo - m_hi)^2.
    let gap = m_lo - m_hi;
    let v = w_lo * v_lo + w_hi * v_hi + w_lo * w_hi * gap * gap;
    (omega, m, v)
}

/// Mean and variance of a spike-and-slab variable:
/// `E = (1-omega) m`, `Var = (1-omega)(v + omega m^2)`.
pub fn spike_slab_mean_var(d: &SpikeSlab1) -> (f64, f64) {
    let slab = 1.0 - d.omega;
    (slab * d.m, slab * (d.v + d.omega * d.m * d.m))
}

/// Log density of the location-scale Student-t with squared scale `scale2`
/// and `dof` degrees of freedom. Panics on non-positive `scale2` or `dof`.
pub fn student_t_logpdf(x: f64, loc: f64, scale2: f64, dof: f64) -> f64 {
    assert!(scale2 > 0.0, "scale2 must be positive, got {scale2}");
    assert!(dof > 0.0, "dof must be positive, got {dof}");
    let z2 = (x - loc) * (x - loc) / scale2;
    libm::lgamma(0.5 * (dof + 1.0)) - libm::lgamma(0.5 * dof)
        - 0.5 * libm::log(dof * core::f64::consts::PI * scale2)
        - 0.5 * (dof + 1.0) * libm::log1p(z2 / dof)
}

/// Log density of `N(mean, var)`. Panics on non-positive variance.
pub fn gauss_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    assert!(var > 0.0, "variance must be positive, got {var}");
    let z2 = (x - mean) * (x - mean) / var;
    -0.5 * (z2 + libm::log(2.0 * core::f64::consts::PI * var))
}

/// `log(exp(a) + exp(b))` without overflow; tolerates `-inf` inputs.
pub(crate) fn logsumexp2(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + libm::log1p(libm::exp(lo - hi))
}
