//! Dense linear algebra and differentiation in double precision.
//!
//! Two independent differentiation routes live here:
//!
//! * [`Dual`] carries up to [`MAX_TANGENTS`] forward tangents.
//! * [`Tape`] records a scalar computation and runs one reverse sweep.
//!
//! Both are driven through the [`Real`] trait, so the same generic function
//! can be evaluated on `f64`, on duals, on a tape of `f64`, or on a tape of
//! duals (forward-over-reverse, used by [`hess_diag_sum`]).

pub mod activation;
mod dual;
mod laplacian;
mod matrix;
mod real;
mod tape;

pub use dual::{Dual, MAX_TANGENTS};
pub use laplacian::{grad_reverse, hess_diag_sum, hutchinson_laplacian, ScalarFn};
pub use matrix::{gemm, Matrix};
pub use real::Real;
pub use tape::{Op, Tape, Var};

/// Index of the first NaN or infinity in `values`.
pub fn check_finite(values: &[f64]) -> Result<(), usize> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(i),
        None => Ok(()),
    }
}
