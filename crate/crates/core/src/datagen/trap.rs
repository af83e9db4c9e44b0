//! Interacting particles in a moving aharmonic trap:
//! `dZ_i = (a(t) - Z_i)^3 dt + alpha (mean(Z) - Z_i) dt + sqrt(2 gamma) dW_i`
//! with `a(t) = 5/4 (sin(pi t) + 3/2) + mu cos(2 pi t)` on both coordinates.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Provenance, SnapshotDataset};
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapConfig {
    pub mus: Vec<f64>,
    pub particles: usize,
    /// Coordinates per particle.
    pub particle_dim: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub dt: f64,
    pub horizon: f64,
    pub n_samples: usize,
    pub n_times: usize,
    /// Standard deviation of the initial positions around `a(0)`.
    pub initial_spread: f64,
}

impl Default for TrapConfig {
    fn default() -> Self {
        TrapConfig {
            mus: (0..7).map(|k| 0.3 + 0.1 * k as f64).collect(),
            particles: 50,
            particle_dim: 2,
            alpha: -0.25,
            gamma: 1e-2,
            dt: 1e-3,
            horizon: 2.0,
            n_samples: 500,
            n_times: 101,
            initial_spread: 0.2,
        }
    }
}

impl TrapConfig {
    pub fn dim(&self) -> usize {
        self.particles * self.particle_dim
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.gamma >= 0.0 && self.initial_spread >= 0.0) {
            return Err(Error::config("trap", "dt and horizon must be positive, gamma and spread nonnegative"));
        }
        let steps = self.steps();
        if ((steps as f64) * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::config("trap.dt", "horizon must be a whole number of steps"));
        }
        if self.n_times < 2 || steps % (self.n_times - 1) != 0 {
            return Err(Error::config("trap.n_times", format!("n_times - 1 must divide the {steps} steps")));
        }
        if self.particles == 0 || self.particle_dim == 0 || self.n_samples == 0 || self.mus.is_empty() {
            return Err(Error::config("trap", "particles, particle_dim, n_samples and mus must be nonempty"));
        }
        Ok(())
    }
}

/// Trap centre at time `t`.
pub fn trap_center(t: f64, mu: f64) -> f64 {
    1.25 * ((PI * t).sin() + 1.5) + mu * (2.0 * PI * t).cos()
}

/// Advances one realization by one Euler-Maruyama step.
fn step(cfg: &TrapConfig, z: &mut [f64], t: f64, mu: f64, rng: &mut impl Rng) {
    let a = trap_center(t, mu);
    let pd = cfg.particle_dim;
    let m = cfg.particles as f64;
    let mut mean = vec![0.0; pd];
    for p in z.chunks_exact(pd) {
        for (acc, v) in mean.iter_mut().zip(p) {
            *acc += v / m;
        }
    }
    let noise = (2.0 * cfg.gamma * cfg.dt).sqrt();
    for p in z.chunks_exact_mut(pd) {
        for (v, c) in p.iter_mut().zip(&mean) {
            let drift = (a - *v).powi(3) + cfg.alpha * (c - *v);
            let xi: f64 = if cfg.gamma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            *v += drift * cfg.dt + noise * xi;
        }
    }
}

pub fn generate(cfg: &TrapConfig, seed: u64) -> Result<SnapshotDataset> {
    cfg.validate()?;
    let d = cfg.dim();
    let steps = cfg.steps();
    let every = steps / (cfg.n_times - 1);
    let n = cfg.n_samples;
    let per_mu: Vec<Vec<f32>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .mus
            .iter()
            .enumerate()
            .map(|(k, &mu)| {
                scope.spawn(move || {
                    let mut rng = rng::stream(seed, rng::purpose::GENERATOR, k as u64);
                    let a0 = trap_center(0.0, mu);
                    let mut states: Vec<f64> =
                        (0..n * d).map(|_| a0 + cfg.initial_spread * rng.sample::<f64, _>(StandardNormal)).collect();
                    let mut out = Vec::with_capacity(cfg.n_times * n * d);
                    out.extend(states.iter().map(|v| *v as f32));
                    for s in 0..steps {
                        let t = s as f64 * cfg.dt;
                        for z in states.chunks_exact_mut(d) {
                            step(cfg, z, t, mu, &mut rng);
                        }
                        if (s + 1) % every == 0 {
                            out.extend(states.iter().map(|v| *v as f32));
                        }
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("trap thread panicked")).collect()
    });
    let nt = cfg.n_times - 1;
    let times = (0..=nt).map(|j| if j == nt { cfg.horizon } else { cfg.horizon * j as f64 / nt as f64 }).collect();
    let provenance = Provenance::new("trap", serde_json::to_value(cfg).expect("config serializes"), seed);
    SnapshotDataset::new(d, n, times, cfg.mus.iter().map(|&m| vec![m]).collect(), true, provenance, per_mu.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Classical RK4 with step halving until two successive answers agree.
    fn reference(z0: f64, mu: f64, horizon: f64) -> f64 {
        let rhs = |t: f64, z: f64| (trap_center(t, mu) - z).powi(3);
        let solve = |n: usize| {
            let h = horizon / n as f64;
            let mut z = z0;
            for k in 0..n {
                let t = k as f64 * h;
                let k1 = rhs(t, z);
                let k2 = rhs(t + h / 2.0, z + h / 2.0 * k1);
                let k3 = rhs(t + h / 2.0, z + h / 2.0 * k2);
                let k4 = rhs(t + h, z + h * k3);
                z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            z
        };
        let mut n = 1000;
        let mut prev = solve(n);
        loop {
            n *= 2;
            let next = solve(n);
            if (next - prev).abs() < 1e-13 {
                return next;
            }
            prev = next;
        }
    }

    #[test]
    fn single_noiseless_particle_tracks_reference() {
        let cfg = TrapConfig {
            mus: vec![0.6],
            particles: 1,
            particle_dim: 1,
            alpha: 0.0,
            gamma: 0.0,
            dt: 1e-6,
            horizon: 2.0,
            n_samples: 1,
            n_times: 3,
            initial_spread: 0.0,
        };
        let ds = generate(&cfg, 0).unwrap();
        let z0 = trap_center(0.0, 0.6);
        for (j, t) in [(1, 1.0), (2, 2.0)] {
            let got = ds.sample(0, j, 0)[0] as f64;
            let want = reference(z0, 0.6, t);
            // f32 storage contributes up to ~2e-7
            assert!((got - want).abs() < 1e-5, "t={t}: {got} vs {want}");
        }
    }

    #[test]
    fn independent_particles_are_uncorrelated() {
        let cfg = TrapConfig { mus: vec![0.5], alpha: 0.0, dt: 1e-2, n_times: 2, n_samples: 2000, particles: 4, ..Default::default() };
        let ds = generate(&cfg, 3).unwrap();
        let snap = ds.snapshot_f64(0, 1);
        let d = cfg.dim();
        let col = |c: usize| snap.chunks(d).map(|s| s[c]).collect::<Vec<_>>();
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
            cov / (va * vb).sqrt()
        };
        // standard error of a null correlation is 1/sqrt(n)
        for (a, b) in [(0, 2), (1, 3), (0, 7)] {
            let r = corr(&col(a), &col(b));
            assert!(r.abs() < 4.0 / 2000f64.sqrt(), "{a},{b}: {r}");
        }
    }

    #[test]
    fn interaction_pulls_toward_the_mean() {
        // with alpha < 0 particles are pushed apart, so the spread grows
        let base = TrapConfig { mus: vec![0.5], dt: 1e-2, n_times: 2, n_samples: 200, gamma: 0.0, ..Default::default() };
        let spread = |alpha: f64| {
            let ds = generate(&TrapConfig { alpha, ..base.clone() }, 4).unwrap();
            let s = ds.snapshot_f64(0, 1);
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        };
        assert!(spread(-0.25) > spread(0.0));
        assert!(spread(0.5) < spread(0.0));
    }

    #[test]
    fn deterministic_and_valid() {
        let cfg = TrapConfig { dt: 1e-2, n_samples: 20, n_times: 5, ..Default::default() };
        let a = generate(&cfg, 8).unwrap();
        assert_eq!(a, generate(&cfg, 8).unwrap());
        assert_eq!(a.dim(), 100);
        assert_eq!(a.n_mu(), 7);
        assert!(a.validate().is_ok());
    }
}
