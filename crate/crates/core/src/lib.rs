//! Learning parametric population dynamics with action matching.
//!
//! A scalar field `s(x, t, mu)` is fit to sample trajectories so that the
//! gradient field `grad_x s` transports the empirical population over time.
//! The time integral of the training objective is estimated with a
//! deterministic quadrature rule (composite Simpson or Gauss-Legendre), which
//! keeps the loss estimate low-variance; the Monte Carlo rule is kept as the
//! baseline. New trajectories at unseen parameters are produced by integrating
//! `dX = grad_x s dt + eps dW` from an initial ensemble.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`diffcore`] | dense matrices, dual numbers, a reverse-mode tape, Laplacians |
//! | [`quadrature`] | Monte Carlo, trapezoid, Simpson and Gauss-Legendre rules |
//! | [`quadbench`] | estimator error of each rule for a time integral |
//! | [`model`] | CoLoRA main network driven by a hypernetwork, exact field jets |
//! | [`loss`] | the empirical objective and its weight gradient |
//! | [`trainer`] | Adam with cosine decay, divergence bookkeeping |
//! | [`datagen`] | oscillator, Vlasov-Poisson PIC and trap generators |
//! | [`sampler`] | Euler-Maruyama inference on a learned field |
//! | [`metrics`] | Wasserstein, Sinkhorn, electric energy, relative errors |
//! | [`store`] | dataset and checkpoint files |
//! | [`cli`] | the `hoam` command line |

pub mod cli;
pub mod datagen;
pub mod diffcore;
mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod quadbench;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod store;
pub mod trainer;

pub use datagen::SnapshotDataset;
pub use error::{Error, Result};
pub use model::{FieldJet, FieldModel};
pub use quadrature::{QuadratureKind, QuadratureRule};
