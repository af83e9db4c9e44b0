//! 1D1V Vlasov-Poisson particle-in-cell solver for the two-stream and
//! bump-on-tail instabilities, with Ornstein-Uhlenbeck velocity collisions.
//!
//! Each step is kick-drift-kick with the field from a cloud-in-cell deposit
//! and a spectral solve of `-mu^2 phi'' = 1 - n` on the periodic grid, then
//! `v <- v - beta v dt + v_th sqrt(2 beta dt) xi`. Particles feel `dv/dt = -E`.
//!
//! Snapshots hold positions wrapped onto `[0, length)`, and the dataset marks
//! the position coordinate as periodic.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{Provenance, SnapshotDataset};
use crate::rng;
use crate::{Error, Result};

type C64 = Complex<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PicCase {
    TwoStream,
    BumpOnTail,
}

impl PicCase {
    pub fn training_mus(self) -> Vec<f64> {
        let start = match self {
            PicCase::TwoStream => 1.2,
            PicCase::BumpOnTail => 1.3,
        };
        (0..8).map(|k| start + 0.1 * k as f64).collect()
    }

    pub fn test_mus(self) -> Vec<f64> {
        match self {
            PicCase::TwoStream => vec![1.25, 1.85],
            PicCase::BumpOnTail => vec![1.35, 1.95],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicConfig {
    pub case: PicCase,
    /// Physics parameters; `None` uses the training grid of `case`.
    pub mus: Option<Vec<f64>>,
    pub n_particles: usize,
    /// Grid cells; `None` uses `n_particles / 8`.
    pub cells: Option<usize>,
    pub dt: f64,
    pub horizon: f64,
    pub n_times: usize,
    /// Collision rate.
    pub beta: f64,
    /// Thermal velocity of the collision noise.
    pub collision_velocity: f64,
    pub alpha: f64,
    pub length: f64,
    /// Beam velocity of the two-stream case.
    pub stream_velocity: f64,
    /// Bulk fraction of the bump-on-tail case.
    pub bulk_fraction: f64,
    pub bump_velocity: f64,
    pub bulk_width: f64,
    pub bump_width: f64,
    /// Load particles on a lattice of `n_particles / cells` velocity levels
    /// times `cells` positions instead of sampling them.
    pub quiet_start: bool,
}

impl Default for PicConfig {
    fn default() -> Self {
        PicConfig {
            case: PicCase::TwoStream,
            mus: None,
            n_particles: 25_000,
            cells: None,
            dt: 1e-2,
            horizon: 40.0,
            n_times: 101,
            beta: 1e-3,
            collision_velocity: 1.0,
            alpha: 0.05,
            length: 50.0,
            stream_velocity: 3.0,
            bulk_fraction: 0.9,
            bump_velocity: 4.0,
            bulk_width: 1.0,
            bump_width: std::f64::consts::FRAC_1_SQRT_2,
            quiet_start: false,
        }
    }
}

/// Electric energy after every step of one simulation, with the complex
/// amplitude `[re, im]` of the field's fundamental mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub mu: f64,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub fundamental: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicOutput {
    pub dataset: SnapshotDataset,
    pub traces: Vec<EnergyTrace>,
}

impl PicConfig {
    pub fn mus(&self) -> Vec<f64> {
        self.mus.clone().unwrap_or_else(|| self.case.training_mus())
    }

    pub fn cells(&self) -> usize {
        self.cells.unwrap_or(self.n_particles / 8)
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.length > 0.0) {
            return Err(Error::config("pic", "dt, horizon and length must be positive"));
        }
        let steps = self.steps();
        if ((steps as f64) * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::config("pic.dt", "horizon must be a whole number of steps"));
        }
        if self.n_times < 2 || steps % (self.n_times - 1) != 0 {
            return Err(Error::config("pic.n_times", format!("n_times - 1 must divide the {steps} steps")));
        }
        if self.cells() < 4 || self.n_particles == 0 {
            return Err(Error::config("pic.cells", "need at least 4 cells and one particle"));
        }
        if self.quiet_start && self.n_particles % self.cells() != 0 {
            return Err(Error::config("pic.quiet_start", "n_particles must be a multiple of cells"));
        }
        if !(self.beta >= 0.0 && self.alpha.abs() < 1.0) {
            return Err(Error::config("pic", "need beta >= 0 and |alpha| < 1"));
        }
        if self.mus().iter().any(|m| !(*m > 0.0)) {
            return Err(Error::config("pic.mus", "must be positive"));
        }
        Ok(())
    }

    /// Velocity marginal as Gaussian components `(weight, center, width)`.
    fn velocity_mixture(&self) -> Vec<(f64, f64, f64)> {
        match self.case {
            PicCase::TwoStream => vec![(0.5, self.stream_velocity, 1.0), (0.5, -self.stream_velocity, 1.0)],
            PicCase::BumpOnTail => vec![
                (self.bulk_fraction, 0.0, self.bulk_width),
                (1.0 - self.bulk_fraction, self.bump_velocity, self.bump_width),
            ],
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse CDF of a Gaussian mixture by bisection.
fn mixture_quantile(mix: &[(f64, f64, f64)], u: f64) -> f64 {
    let cdf = |v: f64| mix.iter().map(|&(w, c, s)| w * normal_cdf((v - c) / s)).sum::<f64>();
    let mut lo = mix.iter().map(|&(_, c, s)| c - 40.0 * s).fold(f64::INFINITY, f64::min);
    let mut hi = mix.iter().map(|&(_, c, s)| c + 40.0 * s).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Inverse CDF of `(1 + alpha cos(2 pi x / L)) / L` on `[0, L)` by Newton.
fn position_quantile(alpha: f64, length: f64, u: f64) -> f64 {
    let k = 2.0 * PI / length;
    let mut x = u * length;
    for _ in 0..50 {
        let f = x + alpha * (k * x).sin() / k - u * length;
        let step = f / (1.0 + alpha * (k * x).cos());
        x -= step;
        if step.abs() < 1e-14 * length {
            break;
        }
    }
    x
}

/// Cloud-in-cell deposit and spectral Poisson solve on a periodic grid.
pub struct FieldSolver {
    cells: usize,
    length: f64,
    mu: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex<f64>>,
    density: Vec<f64>,
    field: Vec<f64>,
    fundamental: Complex<f64>,
}

impl FieldSolver {
    pub fn new(cells: usize, length: f64, mu: f64) -> Self {
        let mut planner = FftPlanner::new();
        FieldSolver {
            cells,
            length,
            mu,
            forward: planner.plan_fft_forward(cells),
            inverse: planner.plan_fft_inverse(cells),
            spectrum: vec![Complex::default(); cells],
            density: vec![0.0; cells],
            field: vec![0.0; cells],
            fundamental: Complex::default(),
        }
    }

    fn spacing(&self) -> f64 {
        self.length / self.cells as f64
    }

    /// Cell index and right-neighbour weight of position `x`.
    fn locate(&self, x: f64) -> (usize, usize, f64) {
        let s = x.rem_euclid(self.length) / self.spacing();
        let j = (s.floor() as usize).min(self.cells - 1);
        let w = s - j as f64;
        (j, (j + 1) % self.cells, w)
    }

    /// Deposits particles with unit mean density and solves for `E` on the grid.
    pub fn solve<'a>(&mut self, positions: impl Iterator<Item = &'a f64>) -> Result<&[f64]> {
        self.density.iter_mut().for_each(|v| *v = 0.0);
        let mut count = 0usize;
        for &x in positions {
            if !x.is_finite() {
                return Err(Error::non_finite("particle position"));
            }
            let (j, jn, w) = self.locate(x);
            self.density[j] += 1.0 - w;
            self.density[jn] += w;
            count += 1;
        }
        if count == 0 {
            return Err(Error::Shape("no particles to deposit".into()));
        }
        let scale = self.cells as f64 / count as f64;
        let mut mean = 0.0;
        for (c, d) in self.spectrum.iter_mut().zip(&self.density) {
            *c = Complex::new(d * scale, 0.0);
            mean += d * scale;
        }
        mean /= self.cells as f64;
        if (mean - 1.0).abs() > 1e-9 {
            return Err(Error::Range(format!("deposited charge is not neutral (mean density {mean})")));
        }
        self.forward.process(&mut self.spectrum);
        let n = self.cells;
        let mu2 = self.mu * self.mu;
        for (m, c) in self.spectrum.iter_mut().enumerate() {
            let signed = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            if m == 0 || (n % 2 == 0 && m == n / 2) {
                *c = Complex::default();
                continue;
            }
            let k = 2.0 * PI * signed / self.length;
            // source 1 - n has coefficient -c, and E = -i k phi
            *c = Complex::new(0.0, 1.0) * *c / (mu2 * k);
        }
        self.fundamental = self.spectrum[1] / n as f64;
        self.inverse.process(&mut self.spectrum);
        for (e, c) in self.field.iter_mut().zip(&self.spectrum) {
            *e = c.re / n as f64;
        }
        Ok(&self.field)
    }

    /// `E` interpolated to `x` with the deposit weights.
    pub fn field_at(&self, x: f64) -> f64 {
        let (j, jn, w) = self.locate(x);
        (1.0 - w) * self.field[j] + w * self.field[jn]
    }

    /// `sum_j E_j^2 dx / 2` of the last solve.
    pub fn energy(&self) -> f64 {
        0.5 * self.field.iter().map(|e| e * e).sum::<f64>() * self.spacing()
    }

    /// Fourier coefficient of `E` at wavelength `length`, normalized so that
    /// a field `a cos(2 pi x / length)` gives `a / 2`.
    pub fn fundamental(&self) -> Complex<f64> {
        self.fundamental
    }
}

/// Electric energy of an ensemble of positions.
pub fn electric_energy(positions: &[f64], mu: f64, length: f64, cells: usize) -> Result<f64> {
    let mut solver = FieldSolver::new(cells, length, mu);
    solver.solve(positions.iter())?;
    Ok(solver.energy())
}

fn initial_state(cfg: &PicConfig, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let n = cfg.n_particles;
    let mix = cfg.velocity_mixture();
    if cfg.quiet_start {
        let cells = cfg.cells();
        let levels = n / cells;
        let mut xs = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for l in 0..levels {
            let v = mixture_quantile(&mix, (l as f64 + 0.5) / levels as f64);
            for c in 0..cells {
                xs.push(position_quantile(cfg.alpha, cfg.length, (c as f64 + 0.5) / cells as f64));
                vs.push(v);
            }
        }
        return (xs, vs);
    }
    let k = 2.0 * PI / cfg.length;
    let xs = (0..n)
        .map(|_| loop {
            let x = rng.random::<f64>() * cfg.length;
            if rng.random::<f64>() * (1.0 + cfg.alpha) < 1.0 + cfg.alpha * (k * x).cos() {
                break x;
            }
        })
        .collect();
    let vs = (0..n).map(|_| mixture_quantile(&mix, rng.random::<f64>())).collect();
    (xs, vs)
}

fn pair(c: Complex<f64>) -> [f64; 2] {
    [c.re, c.im]
}

/// Runs one simulation, returning `(x, v)` snapshots flattened as
/// `[time][particle][2]` and the per-step energy trace.
pub fn simulate(cfg: &PicConfig, mu: f64, rng: &mut impl Rng) -> Result<(Vec<f32>, EnergyTrace)> {
    cfg.validate()?;
    let steps = cfg.steps();
    let every = steps / (cfg.n_times - 1);
    let (mut xs, mut vs) = initial_state(cfg, rng);
    let mut solver = FieldSolver::new(cfg.cells(), cfg.length, mu);
    let mut snapshots = Vec::with_capacity(cfg.n_times * xs.len() * 2);
    let record = |snapshots: &mut Vec<f32>, xs: &[f64], vs: &[f64]| {
        for (x, v) in xs.iter().zip(vs) {
            snapshots.push(x.rem_euclid(cfg.length) as f32);
            snapshots.push(*v as f32);
        }
    };
    record(&mut snapshots, &xs, &vs);
    solver.solve(xs.iter())?;
    let mut trace = EnergyTrace { mu, times: vec![0.0], energy: vec![solver.energy()], fundamental: vec![pair(solver.fundamental())] };
    let half = 0.5 * cfg.dt;
    let drag = cfg.beta * cfg.dt;
    let kick = cfg.collision_velocity * (2.0 * cfg.beta * cfg.dt).sqrt();
    for step in 1..=steps {
        for (v, x) in vs.iter_mut().zip(&xs) {
            *v -= half * solver.field_at(*x);
        }
        for (x, v) in xs.iter_mut().zip(&vs) {
            *x += cfg.dt * v;
        }
        solver.solve(xs.iter())?;
        for (v, x) in vs.iter_mut().zip(&xs) {
            *v -= half * solver.field_at(*x);
        }
        if cfg.beta > 0.0 {
            for v in vs.iter_mut() {
                let xi: f64 = rng.sample(StandardNormal);
                *v += -drag * *v + kick * xi;
            }
        }
        trace.times.push(step as f64 * cfg.dt);
        trace.energy.push(solver.energy());
        trace.fundamental.push(pair(solver.fundamental()));
        if step % every == 0 {
            if vs.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("particle velocity at t = {}", step as f64 * cfg.dt)));
            }
            record(&mut snapshots, &xs, &vs);
        }
    }
    Ok((snapshots, trace))
}

/// Simulates every parameter of `cfg` on its own thread.
pub fn generate(cfg: &PicConfig, seed: u64) -> Result<PicOutput> {
    cfg.validate()?;
    let mus = cfg.mus();
    let results: Vec<Result<(Vec<f32>, EnergyTrace)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = mus
            .iter()
            .enumerate()
            .map(|(k, &mu)| {
                scope.spawn(move || {
                    let mut rng = rng::stream(seed, rng::purpose::GENERATOR, k as u64);
                    simulate(cfg, mu, &mut rng)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut data = Vec::with_capacity(mus.len() * cfg.n_times * cfg.n_particles * 2);
    let mut traces = Vec::with_capacity(mus.len());
    for r in results {
        let (snap, trace) = r?;
        data.extend_from_slice(&snap);
        traces.push(trace);
    }
    let n = cfg.n_times - 1;
    let times = (0..=n).map(|j| if j == n { cfg.horizon } else { cfg.horizon * j as f64 / n as f64 }).collect();
    let provenance = Provenance::new("vlasov-pic", serde_json::to_value(cfg).expect("config serializes"), seed);
    let dataset =
        SnapshotDataset::new(2, cfg.n_particles, times, mus.iter().map(|&m| vec![m]).collect(), true, provenance, data)?
            .with_periods(vec![Some(cfg.length), None])?;
    Ok(PicOutput { dataset, traces })
}

/// Growth rate of the fundamental mode's amplitude over `[0, t_end]`.
///
/// The complex amplitude, sampled every `spacing` time units, is fitted by a
/// sum of `order` damped exponentials (matrix pencil). The rate returned is
/// the real part of the exponent whose term dominates at `t_end`, so the
/// beating of oscillatory roots excited by the initial perturbation does not
/// bias it.
pub fn growth_rate(trace: &EnergyTrace, t_end: f64, spacing: f64, order: usize) -> Option<f64> {
    let dt = trace.times.get(1)? - trace.times[0];
    let stride = ((spacing / dt).round() as usize).max(1);
    let y: Vec<C64> = trace
        .fundamental
        .iter()
        .zip(&trace.times)
        .step_by(stride)
        .take_while(|(_, t)| **t <= t_end + 1e-9)
        .map(|(f, _)| C64::new(f[0], f[1]))
        .collect();
    let n = y.len();
    let l = n / 2;
    if order == 0 || n < 2 * order + 2 {
        return None;
    }
    let h = stride as f64 * dt;
    // Hankel matrix of the samples and its dominant right singular vectors
    let hankel = DMatrix::from_fn(n - l, l + 1, |r, c| y[r + c]);
    let svd = hankel.svd(false, true);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let v_t = svd.v_t?;
    let v = DMatrix::from_fn(l + 1, order, |r, c| v_t[(idx[c], r)].conj());
    let v1 = v.rows(0, l).into_owned();
    let v2 = v.rows(1, l).into_owned();
    let pencil = v1.pseudo_inverse(1e-12).ok()? * v2;
    let roots = pencil.schur().eigenvalues()?;
    let vander = DMatrix::from_fn(n, order, |k, r| roots[r].powi(k as i32));
    let coeffs = vander.svd(true, true).solve(&DVector::from_column_slice(&y), 1e-12).ok()?;
    (0..order)
        .filter(|&r| roots[r].norm() > 0.0)
        .max_by(|&a, &b| {
            let w = |r: usize| coeffs[r].norm() * roots[r].norm().powi(n as i32 - 1);
            w(a).total_cmp(&w(b))
        })
        .map(|r| roots[r].norm().ln() / h)
}
