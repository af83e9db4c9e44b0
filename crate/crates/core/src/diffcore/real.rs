use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::activation;

/// Scalar algebra shared by `f64`, [`Dual`](super::Dual) and
/// [`Var`](super::Var). Constants are created with [`Real::lift`] so that
/// tape variables can attach them to the right tape.
pub trait Real:
    Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant living in the same context as `self`.
    fn lift(&self, c: f64) -> Self;
    fn primal(&self) -> f64;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn sigmoid(&self) -> Self;
    fn powi(&self, n: i32) -> Self;

    fn swish(&self) -> Self {
        self.clone() * self.sigmoid()
    }

    /// Derivative of [`Real::swish`].
    fn swish_d1(&self) -> Self {
        let s = self.sigmoid();
        let one = self.lift(1.0);
        s.clone() * (one.clone() + self.clone() * (one - s))
    }

    fn scale(&self, c: f64) -> Self {
        self.clone() * self.lift(c)
    }

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Real for f64 {
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn primal(&self) -> f64 {
        *self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn sigmoid(&self) -> Self {
        activation::sigmoid(*self)
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn swish(&self) -> Self {
        activation::swish(*self)
    }
    fn swish_d1(&self) -> Self {
        activation::swish_d1(*self)
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
}
