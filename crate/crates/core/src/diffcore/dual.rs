use std::ops::{Add, Div, Mul, Neg, Sub};

use arrayvec::ArrayVec;

use super::activation;
use super::real::Real;

/// Forward tangents carried per pass.
pub const MAX_TANGENTS: usize = 16;

/// Primal value plus up to [`MAX_TANGENTS`] tangent components. Missing
/// trailing tangents are implicitly zero, so constants carry none.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: ArrayVec<f64, MAX_TANGENTS>,
}

impl Dual {
    pub fn constant(re: f64) -> Self {
        Dual { re, eps: ArrayVec::new() }
    }

    /// Panics if more than [`MAX_TANGENTS`] tangents are given.
    pub fn new(re: f64, tangents: &[f64]) -> Self {
        assert!(tangents.len() <= MAX_TANGENTS, "at most {MAX_TANGENTS} tangents per pass");
        Dual { re, eps: tangents.iter().copied().collect() }
    }

    /// Seed the `k`-th of `n` tangent directions.
    pub fn variable(re: f64, k: usize, n: usize) -> Self {
        let mut t = [0.0; MAX_TANGENTS];
        t[k] = 1.0;
        Dual::new(re, &t[..n])
    }

    pub fn tangent(&self, k: usize) -> f64 {
        self.eps.get(k).copied().unwrap_or(0.0)
    }

    fn chain(&self, value: f64, slope: f64) -> Dual {
        Dual { re: value, eps: self.eps.iter().map(|e| e * slope).collect() }
    }

    fn zip(&self, other: &Dual, f: impl Fn(f64, f64) -> f64) -> ArrayVec<f64, MAX_TANGENTS> {
        let n = self.eps.len().max(other.eps.len());
        (0..n).map(|k| f(self.tangent(k), other.tangent(k))).collect()
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        let eps = self.zip(&rhs, |a, b| a + b);
        Dual { re: self.re + rhs.re, eps }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        let eps = self.zip(&rhs, |a, b| a - b);
        Dual { re: self.re - rhs.re, eps }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        let (a, b) = (self.re, rhs.re);
        let eps = self.zip(&rhs, |da, db| da * b + a * db);
        Dual { re: a * b, eps }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let (a, b) = (self.re, rhs.re);
        let eps = self.zip(&rhs, |da, db| (da * b - a * db) / (b * b));
        Dual { re: a / b, eps }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.chain(-self.re, -1.0)
    }
}

impl Real for Dual {
    fn lift(&self, c: f64) -> Self {
        Dual::constant(c)
    }
    fn primal(&self) -> f64 {
        self.re
    }
    fn exp(&self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(&self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    fn sin(&self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn sigmoid(&self) -> Self {
        let s = activation::sigmoid(self.re);
        self.chain(s, s * (1.0 - s))
    }
    fn powi(&self, n: i32) -> Self {
        let slope = if n == 0 { 0.0 } else { n as f64 * self.re.powi(n - 1) };
        self.chain(self.re.powi(n), slope)
    }
    fn swish(&self) -> Self {
        self.chain(activation::swish(self.re), activation::swish_d1(self.re))
    }
    fn swish_d1(&self) -> Self {
        self.chain(activation::swish_d1(self.re), activation::swish_d2(self.re))
    }
}
