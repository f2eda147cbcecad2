//! Second-order forward-mode scalars.
//!
//! A [`Jet2`] carries a value together with its first and second derivatives
//! with respect to a single scalar parameter θ. Arithmetic follows the
//! truncated second-order Taylor rules, so pushing a jet through any
//! composition of the supported operations yields exact (up to rounding)
//! derivatives of the composition along θ.
//!
//! The inference engine is generic over [`Scalar`], which lets the
//! derivative-free data pass run on plain `f64`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Scalar type the tensor engine can run on.
pub trait Scalar:
    Copy
    + Debug
    + Default
    + Send
    + Sync
    + PartialEq
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(x: f64) -> Self;
    fn value(self) -> f64;
    /// Multiply by a constant (weights never carry derivatives).
    fn scale(self, k: f64) -> Self;
    /// `self + k * x` for a constant `k`.
    fn add_scaled(self, k: f64, x: Self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    /// Number of f64 components; linear maps act on each independently.
    const LANES: usize = 1;
    fn lane(self, _i: usize) -> f64 {
        self.value()
    }
    fn set_lane(&mut self, _i: usize, x: f64) {
        *self = Self::constant(x);
    }

    /// ReLU with the zero-derivative convention at `v == 0`.
    #[inline]
    fn relu(self) -> Self {
        if self.value() > 0.0 {
            self
        } else {
            Self::default()
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn constant(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
    #[inline]
    fn add_scaled(self, k: f64, x: Self) -> Self {
        self + k * x
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Value plus first and second derivative with respect to θ.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    #[inline]
    pub const fn new(v: f64, d1: f64, d2: f64) -> Self {
        Jet2 { v, d1, d2 }
    }

    /// Lift a constant: both derivatives are zero.
    #[inline]
    pub const fn lift(x: f64) -> Self {
        Jet2 { v: x, d1: 0.0, d2: 0.0 }
    }

    /// Reciprocal `1 / self`.
    #[inline]
    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        let r2 = r * r;
        Jet2 {
            v: r,
            d1: -self.d1 * r2,
            d2: -self.d2 * r2 + 2.0 * self.d1 * self.d1 * r2 * r,
        }
    }
}

/// Free-function form of [`Jet2::lift`].
#[inline]
pub fn lift_constant(x: f64) -> Jet2 {
    Jet2::lift(x)
}

impl Add for Jet2 {
    type Output = Jet2;
    #[inline]
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }
}

impl AddAssign for Jet2 {
    #[inline]
    fn add_assign(&mut self, o: Jet2) {
        self.v += o.v;
        self.d1 += o.d1;
        self.d2 += o.d2;
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    #[inline]
    fn sub(self, o: Jet2) -> Jet2 {
        Jet2 { v: self.v - o.v, d1: self.d1 - o.d1, d2: self.d2 - o.d2 }
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    #[inline]
    fn neg(self) -> Jet2 {
        Jet2 { v: -self.v, d1: -self.d1, d2: -self.d2 }
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    #[inline]
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            d1: self.v * o.d1 + self.d1 * o.v,
            d2: self.v * o.d2 + 2.0 * self.d1 * o.d1 + self.d2 * o.v,
        }
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Jet2) -> Jet2 {
        self * o.recip()
    }
}

impl Scalar for Jet2 {
    const LANES: usize = 3;
    #[inline]
    fn lane(self, i: usize) -> f64 {
        match i {
            0 => self.v,
            1 => self.d1,
            _ => self.d2,
        }
    }
    #[inline]
    fn set_lane(&mut self, i: usize, x: f64) {
        match i {
            0 => self.v = x,
            1 => self.d1 = x,
            _ => self.d2 = x,
        }
    }
    #[inline]
    fn constant(x: f64) -> Self {
        Jet2::lift(x)
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        Jet2 { v: self.v * k, d1: self.d1 * k, d2: self.d2 * k }
    }
    #[inline]
    fn add_scaled(self, k: f64, x: Self) -> Self {
        Jet2 { v: self.v + k * x.v, d1: self.d1 + k * x.d1, d2: self.d2 + k * x.d2 }
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let half_inv = 0.5 / s;
        Jet2 {
            v: s,
            d1: self.d1 * half_inv,
            d2: self.d2 * half_inv - self.d1 * self.d1 * half_inv * half_inv * half_inv * 2.0,
        }
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.v.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }
}
