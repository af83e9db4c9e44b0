//! Ground-truth generators and the snapshot dataset they emit.

mod dataset;
pub mod gaussian;
pub mod oscillator;
pub mod pic;
pub mod trap;

pub use dataset::{Provenance, SnapshotDataset};
pub use gaussian::{GaussianMoments, GaussianPathOracle, Moments, QuadraticField, Rescaled};
pub use oscillator::{Integrator, OscillatorConfig, OscillatorMoments};
pub use pic::{EnergyTrace, PicCase, PicConfig, PicOutput};
pub use trap::TrapConfig;
