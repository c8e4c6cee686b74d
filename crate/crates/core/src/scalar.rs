//! Scalar abstraction over plain `f64` and forward-mode dual numbers.
//!
//! The distribution transforms in [`crate::dist`] are written once, generically,
//! and evaluated either on `f64` (values only) or on [`Dual2`] (values plus
//! derivatives with respect to two chosen inputs). All transcendental functions
//! go through `libm` so results are identical across platforms and across the
//! two scalar types.

use core::ops::{Add, Div, Mul, Neg, Sub};

/// 2 / sqrt(pi), the derivative scale of the error function.
const FRAC_2_SQRT_PI: f64 = core::f64::consts::FRAC_2_SQRT_PI;

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Lifts a constant into the scalar type (zero tangent for duals).
    fn lift(x: f64) -> Self;
    /// The primal value, used for branch decisions.
    fn val(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn erfc(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn lift(x: f64) -> Self {
        x
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

/// Dual number carrying two tangent components.
///
/// Evaluating `f(Dual2::var_x(a), Dual2::var_y(b))` yields `f(a, b)` in `re`
/// and the partial derivatives of `f` with respect to the two seeded inputs in
/// `d`. The primal arithmetic is bit-identical to the plain `f64` path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual2 {
    pub re: f64,
    pub d: [f64; 2],
}

impl Dual2 {
    /// First independent variable: tangent (1, 0).
    pub fn var_x(value: f64) -> Self {
        Dual2 { re: value, d: [1.0, 0.0] }
    }

    /// Second independent variable: tangent (0, 1).
    pub fn var_y(value: f64) -> Self {
        Dual2 { re: value, d: [0.0, 1.0] }
    }

    fn chain(self, value: f64, dvalue: f64) -> Self {
        Dual2 { re: value, d: [dvalue * self.d[0], dvalue * self.d[1]] }
    }
}

impl Add for Dual2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Dual2 { re: self.re + rhs.re, d: [self.d[0] + rhs.d[0], self.d[1] + rhs.d[1]] }
    }
}

impl Sub for Dual2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Dual2 { re: self.re - rhs.re, d: [self.d[0] - rhs.d[0], self.d[1] - rhs.d[1]] }
    }
}

impl Mul for Dual2 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Dual2 {
            re: self.re * rhs.re,
            d: [
                self.d[0] * rhs.re + rhs.d[0] * self.re,
                self.d[1] * rhs.re + rhs.d[1] * self.re,
            ],
        }
    }
}

impl Div for Dual2 {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.re / rhs.re;
        let inv = 1.0 / rhs.re;
        Dual2 {
            re: q,
            d: [
                (self.d[0] - q * rhs.d[0]) * inv,
                (self.d[1] - q * rhs.d[1]) * inv,
            ],
        }
    }
}

impl Neg for Dual2 {
    type Output = Self;
    fn neg(self) -> Self {
        Dual2 { re: -self.re, d: [-self.d[0], -self.d[1]] }
    }
}

impl Scalar for Dual2 {
    fn lift(x: f64) -> Self {
        Dual2 { re: x, d: [0.0, 0.0] }
    }
    fn val(self) -> f64 {
        self.re
    }
    fn exp(self) -> Self {
        let e = libm::exp(self.re);
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(libm::log(self.re), 1.0 / self.re)
    }
    fn sqrt(self) -> Self {
        let s = libm::sqrt(self.re);
        self.chain(s, 0.5 / s)
    }
    fn erfc(self) -> Self {
        let dv = -FRAC_2_SQRT_PI * libm::exp(-self.re * self.re);
        self.chain(libm::erfc(self.re), dv)
    }
}
