//! Harmonic oscillator in 4D phase space `(x1, x2, v1, v2)` with white noise
//! of strength `eta` on the momentum equation, and its closed-form Gaussian
//! moments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian::{GaussianMoments, Moments};
use super::{Provenance, SnapshotDataset};
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Explicit Euler-Maruyama.
    EulerMaruyama,
    /// Exact Gaussian transition of the linear SDE.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OscillatorConfig {
    pub omega: f64,
    pub eta: f64,
    pub m0: [f64; 2],
    /// Initial position variance per axis.
    pub var_x0: f64,
    /// Initial velocity variance per axis.
    pub var_v0: f64,
    pub n_samples: usize,
    pub n_times: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Frequencies to sweep as the physics parameter; `None` uses `omega`.
    pub omegas: Option<Vec<f64>>,
    pub integrator: Integrator,
}

impl Default for OscillatorConfig {
    fn default() -> Self {
        OscillatorConfig {
            omega: 8.0,
            eta: 0.05,
            m0: [1.0, 1.0],
            var_x0: 1e-2,
            var_v0: 1e-2,
            n_samples: 2000,
            n_times: 257,
            horizon: 1.0,
            dt: 1e-3,
            omegas: None,
            integrator: Integrator::EulerMaruyama,
        }
    }
}

impl OscillatorConfig {
    fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("oscillator.{name}"), "must be positive"))
            }
        };
        pos("horizon", self.horizon)?;
        pos("dt", self.dt)?;
        for &w in self.omegas.as_deref().unwrap_or(&[self.omega]) {
            pos("omega", w)?;
        }
        if !(self.eta >= 0.0 && self.var_x0 >= 0.0 && self.var_v0 >= 0.0) {
            return Err(Error::config("oscillator", "eta and initial variances must be nonnegative"));
        }
        if self.n_samples == 0 || self.n_times < 2 {
            return Err(Error::config("oscillator", "need at least one sample and two snapshot times"));
        }
        Ok(())
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.omegas.clone().unwrap_or_else(|| vec![self.omega])
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        let n = self.n_times - 1;
        (0..=n).map(|j| if j == n { self.horizon } else { self.horizon * j as f64 / n as f64 }).collect()
    }

    /// Closed-form moments at frequency `omega`.
    pub fn moments(&self, omega: f64) -> OscillatorMoments {
        OscillatorMoments { omega, eta: self.eta, m0: self.m0, var_x0: self.var_x0, var_v0: self.var_v0 }
    }
}

/// Per-axis propagator `[[cos, sin/w], [-w sin, cos]]`.
fn propagator(omega: f64, t: f64) -> [[f64; 2]; 2] {
    let (s, c) = (omega * t).sin_cos();
    [[c, s / omega], [-omega * s, c]]
}

/// Per-axis covariance of `eta * int_0^t Phi(t-u) e_v dW_u`.
fn noise_cov(omega: f64, eta: f64, t: f64) -> [[f64; 2]; 2] {
    let e2 = eta * eta;
    let s2w = (2.0 * omega * t).sin() / (4.0 * omega);
    let int_sin2 = 0.5 * t - s2w;
    let int_cos2 = 0.5 * t + s2w;
    let int_sc = (omega * t).sin().powi(2) / (2.0 * omega);
    [[e2 * int_sin2 / (omega * omega), e2 * int_sc / omega], [e2 * int_sc / omega, e2 * int_cos2]]
}

pub fn generate(cfg: &OscillatorConfig, seed: u64) -> Result<SnapshotDataset> {
    cfg.validate()?;
    let times = cfg.snapshot_times();
    let omegas = cfg.omegas();
    let n = cfg.n_samples;
    let interval = cfg.horizon / (cfg.n_times - 1) as f64;
    let sub = (interval / cfg.dt).ceil().max(1.0) as usize;
    let h = interval / sub as f64;
    let mut data = Vec::with_capacity(omegas.len() * times.len() * n * 4);
    for (k, &omega) in omegas.iter().enumerate() {
        let mut rng = rng::stream(seed, rng::purpose::GENERATOR, k as u64);
        let (sx, sv) = (cfg.var_x0.sqrt(), cfg.var_v0.sqrt());
        let mut state: Vec<[f64; 4]> = (0..n)
            .map(|_| {
                let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                [cfg.m0[0] + sx * z[0], cfg.m0[1] + sx * z[1], sv * z[2], sv * z[3]]
            })
            .collect();
        let phi = propagator(omega, h);
        let q = noise_cov(omega, cfg.eta, h);
        // Cholesky factor of the per-axis step covariance
        let l00 = q[0][0].sqrt();
        let l10 = if l00 > 0.0 { q[1][0] / l00 } else { 0.0 };
        let l11 = (q[1][1] - l10 * l10).max(0.0).sqrt();
        let push = |data: &mut Vec<f32>, state: &[[f64; 4]]| {
            for s in state {
                data.extend(s.iter().map(|&v| v as f32));
            }
        };
        push(&mut data, &state);
        let noise_scale = cfg.eta * h.sqrt();
        for _ in 1..times.len() {
            for s in state.iter_mut() {
                for _ in 0..sub {
                    match cfg.integrator {
                        Integrator::EulerMaruyama => {
                            for a in 0..2 {
                                let (x, v) = (s[a], s[a + 2]);
                                let xi: f64 = if cfg.eta > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                                s[a] = x + h * v;
                                s[a + 2] = v - h * omega * omega * x + noise_scale * xi;
                            }
                        }
                        Integrator::Exact => {
                            for a in 0..2 {
                                let (x, v) = (s[a], s[a + 2]);
                                let (z0, z1): (f64, f64) = if cfg.eta > 0.0 {
                                    (rng.sample(StandardNormal), rng.sample(StandardNormal))
                                } else {
                                    (0.0, 0.0)
                                };
                                s[a] = phi[0][0] * x + phi[0][1] * v + l00 * z0;
                                s[a + 2] = phi[1][0] * x + phi[1][1] * v + l10 * z0 + l11 * z1;
                            }
                        }
                    }
                }
            }
            push(&mut data, &state);
        }
    }
    let provenance = Provenance::new("oscillator", serde_json::to_value(cfg).expect("config serializes"), seed);
    SnapshotDataset::new(4, n, times, omegas.iter().map(|&w| vec![w]).collect(), true, provenance, data)
}

/// Exact mean and covariance of the oscillator state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OscillatorMoments {
    pub omega: f64,
    pub eta: f64,
    pub m0: [f64; 2],
    pub var_x0: f64,
    pub var_v0: f64,
}

impl GaussianMoments for OscillatorMoments {
    fn dim(&self) -> usize {
        4
    }

    fn moments(&self, t: f64) -> Moments {
        let w = self.omega;
        let p = propagator(w, t);
        let q = noise_cov(w, self.eta, t);
        let mut m = DVector::zeros(4);
        let mut sigma = DMatrix::zeros(4, 4);
        let s0 = [[self.var_x0, 0.0], [0.0, self.var_v0]];
        for a in 0..2 {
            let idx = [a, a + 2];
            for r in 0..2 {
                m[idx[r]] = p[r][0] * self.m0[a];
                for c in 0..2 {
                    let mut v = q[r][c];
                    for i in 0..2 {
                        for j in 0..2 {
                            v += p[r][i] * s0[i][j] * p[c][j];
                        }
                    }
                    sigma[(idx[r], idx[c])] = v;
                }
            }
        }
        let mut drift = DMatrix::zeros(4, 4);
        drift[(0, 2)] = 1.0;
        drift[(1, 3)] = 1.0;
        drift[(2, 0)] = -w * w;
        drift[(3, 1)] = -w * w;
        let mut noise = DMatrix::zeros(4, 4);
        noise[(2, 2)] = self.eta * self.eta;
        noise[(3, 3)] = self.eta * self.eta;
        let m_dot = &drift * &m;
        let m_ddot = &drift * &m_dot;
        let sigma_dot = &drift * &sigma + &sigma * drift.transpose() + noise;
        let sigma_ddot = &drift * &sigma_dot + &sigma_dot * drift.transpose();
        Moments { m, m_dot, m_ddot, sigma, sigma_dot, sigma_ddot }
    }
}
