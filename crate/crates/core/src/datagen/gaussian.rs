//! Minimal-energy gradient fields for Gaussian curves `N(m(t), S(t))`.
//!
//! The field is `s(x, t) = x^T A x / 2 + b^T x` with `A S + S A = S' - eps^2 I`
//! and `b = m' - A m`. With `eps = 0` it transports the Gaussian along the
//! continuity equation; with `eps > 0` it does so along the Fokker-Planck
//! equation with diffusion `eps^2 / 2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::model::{BlockCoeffs, BlockSums, ScalarField};
use crate::{Error, Result};

/// Mean and covariance with their first two time derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: DVector<f64>,
    pub m_dot: DVector<f64>,
    pub m_ddot: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_dot: DMatrix<f64>,
    pub sigma_ddot: DMatrix<f64>,
}

pub trait GaussianMoments {
    fn dim(&self) -> usize;
    fn moments(&self, t: f64) -> Moments;
}

/// Reparametrizes a curve by `t = t0 + horizon * tau`.
#[derive(Clone, Debug)]
pub struct Rescaled<M> {
    pub inner: M,
    pub t0: f64,
    pub horizon: f64,
}

impl<M: GaussianMoments> GaussianMoments for Rescaled<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn moments(&self, tau: f64) -> Moments {
        let h = self.horizon;
        let m = self.inner.moments(self.t0 + h * tau);
        Moments {
            m: m.m,
            m_dot: m.m_dot * h,
            m_ddot: m.m_ddot * (h * h),
            sigma: m.sigma,
            sigma_dot: m.sigma_dot * h,
            sigma_ddot: m.sigma_ddot * (h * h),
        }
    }
}

/// Coefficients of the quadratic field and their time derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticField {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub a_dot: DMatrix<f64>,
    pub b_dot: DVector<f64>,
}

impl QuadraticField {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a * x)) + self.b.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    pub fn time_derivative(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a_dot * x)) + self.b_dot.dot(x)
    }

    pub fn laplacian(&self) -> f64 {
        self.a.trace()
    }
}

/// Solves `A S + S A = C` for symmetric positive definite `S` through the
/// eigenbasis of `S`.
struct LyapunovSolver {
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl LyapunovSolver {
    fn new(sigma: &DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        let eig = SymmetricEigen::new(sigma.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(min > rel_tol * max.abs()) || !min.is_finite() {
            return Err(Error::Range(format!(
                "covariance is singular (eigenvalues in [{min:.3e}, {max:.3e}])"
            )));
        }
        Ok(LyapunovSolver { basis: eig.eigenvectors, eigenvalues: eig.eigenvalues })
    }

    fn solve(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let u = &self.basis;
        let mut ct = u.transpose() * c * u;
        let l = &self.eigenvalues;
        for i in 0..l.len() {
            for j in 0..l.len() {
                ct[(i, j)] /= l[i] + l[j];
            }
        }
        let a = u * ct * u.transpose();
        (&a + a.transpose()) * 0.5
    }
}

/// Minimal-energy field along a Gaussian curve.
#[derive(Clone, Debug)]
pub struct GaussianPathOracle<M> {
    pub moments: M,
    pub eps: f64,
    /// Smallest accepted eigenvalue of the covariance relative to the largest.
    pub singular_tol: f64,
}

impl<M: GaussianMoments> GaussianPathOracle<M> {
    pub fn new(moments: M) -> Self {
        GaussianPathOracle { moments, eps: 0.0, singular_tol: 1e-12 }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn dim(&self) -> usize {
        self.moments.dim()
    }

    pub fn field(&self, t: f64) -> Result<QuadraticField> {
        let mo = self.moments.moments(t);
        let d = self.dim();
        let solver = LyapunovSolver::new(&mo.sigma, self.singular_tol)?;
        let diffusion = DMatrix::identity(d, d) * (self.eps * self.eps);
        let a = solver.solve(&(&mo.sigma_dot - &diffusion));
        let b = &mo.m_dot - &a * &mo.m;
        // differentiate A S + S A = S' - eps^2 I once more in time
        let rhs = &mo.sigma_ddot - &a * &mo.sigma_dot - &mo.sigma_dot * &a;
        let a_dot = solver.solve(&rhs);
        let b_dot = &mo.m_ddot - &a_dot * &mo.m - &a * &mo.m_dot;
        Ok(QuadraticField { a, b, a_dot, b_dot })
    }

    /// `(s*, grad s*)` at `(x, t)`.
    pub fn oracle_field(&self, x: &[f64], t: f64) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("point has {} coordinates, oracle has {}", x.len(), self.dim())));
        }
        let f = self.field(t)?;
        let x = DVector::from_column_slice(x);
        Ok((f.value(&x), f.gradient(&x).as_slice().to_vec()))
    }

    /// Frobenius norm of `S' - eps^2 I - (A S + S A)`.
    pub fn lyapunov_residual(&self, t: f64) -> Result<f64> {
        let f = self.field(t)?;
        let mo = self.moments.moments(t);
        let d = self.dim();
        let r = &mo.sigma_dot - DMatrix::identity(d, d) * (self.eps * self.eps) - (&f.a * &mo.sigma + &mo.sigma * &f.a);
        Ok(r.norm())
    }

    /// `E |grad s*|^2 = tr(A S A) + |m' - A m + A m|^2` at time `t`.
    pub fn kinetic_energy(&self, t: f64) -> Result<f64> {
        let f = self.field(t)?;
        let mo = self.moments.moments(t);
        let mean_grad = &f.a * &mo.m + &f.b;
        Ok((&f.a * &mo.sigma * &f.a).trace() + mean_grad.norm_squared())
    }

    /// Value of the loss at the optimum, `-1/2 int_a^b E |grad s*|^2 dt`, by
    /// composite Simpson on `2 * half_intervals` panels.
    pub fn optimal_loss(&self, a: f64, b: f64, half_intervals: usize) -> Result<f64> {
        let n = 2 * half_intervals.max(1);
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * self.kinetic_energy(a + h * k as f64)?;
        }
        Ok(-0.5 * acc * h / 3.0)
    }

    /// Log-density of `N(m(t), S(t))` at `x`.
    pub fn log_density(&self, x: &[f64], t: f64) -> Result<f64> {
        let mo = self.moments.moments(t);
        let chol = mo
            .sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Range("covariance is not positive definite".into()))?;
        let r = DVector::from_column_slice(x) - &mo.m;
        let z = chol.l().solve_lower_triangular(&r).expect("cholesky factor is invertible");
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let d = self.dim() as f64;
        Ok(-0.5 * (z.norm_squared() + log_det + d * (2.0 * std::f64::consts::PI).ln()))
    }

    /// Samples of `N(m(t), S(t))`, row-major.
    pub fn sample(&self, t: f64, n: usize, rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
        let mo = self.moments.moments(t);
        let chol = mo
            .sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Range("covariance is not positive definite".into()))?;
        let l = chol.l();
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            out.extend((&mo.m + &l * z).iter());
        }
        Ok(out)
    }
}

impl<M: GaussianMoments> ScalarField for GaussianPathOracle<M> {
    fn dim(&self) -> usize {
        self.moments.dim()
    }

    fn n_params(&self) -> usize {
        0
    }

    fn block_objective(
        &self,
        xs: &[f64],
        tau: f64,
        _mu: &[f64],
        _coeffs: &BlockCoeffs,
        _probe_seed: u64,
        _grad: Option<&mut [f64]>,
    ) -> Result<BlockSums> {
        let d = self.dim();
        let f = self.field(tau)?;
        let lap = f.laplacian();
        let mut sums = BlockSums::default();
        for x in xs.chunks_exact(d) {
            let x = DVector::from_column_slice(x);
            sums.value += f.value(&x);
            sums.tau += f.time_derivative(&x);
            sums.half_grad_sq += 0.5 * f.gradient(&x).norm_squared();
            sums.laplacian += lap;
        }
        Ok(sums)
    }

    fn grad_x_block(&self, xs: &[f64], tau: f64, _mu: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let f = self.field(tau)?;
        for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            o.copy_from_slice(f.gradient(&DVector::from_column_slice(x)).as_slice());
        }
        Ok(())
    }
}
