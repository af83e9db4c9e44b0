//! The scalar field `s(x, t, mu)`: a swish network whose layers carry a
//! low-rank correction `phi_l(t, mu) A_l B_l` with the modulations `phi_l`
//! produced by a small hypernetwork.
//!
//! Time enters as the normalized `tau = (t - t0) / T` in `[0, 1]`; every jet
//! returned here differentiates with respect to `tau` and to physical `x`.
//! Two evaluation routes exist: a batched channel-major engine with a
//! hand-written adjoint (used for training and inference), and a generic
//! [`Real`] evaluation used by [`FieldModel::eval_jet_taped`] as an
//! independent reference.

mod engine;
mod taped;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::SnapshotDataset;
use crate::diffcore::{Matrix, MAX_TANGENTS};
use crate::rng;
use crate::{Error, Result};

use engine::{Channels, LayerCache, Slot};

pub use crate::diffcore::Real;

/// How the spatial Laplacian is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LaplacianMode {
    /// Exact for `d <= laplacian_cap`; larger inputs are refused.
    Exact,
    /// Exact up to the cap, Rademacher-probe estimate above it.
    Hutchinson { probes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub param_dim: usize,
    /// Number of linear layers in the main network.
    pub depth_main: usize,
    pub width_main: usize,
    /// Number of linear layers in the hypernetwork.
    pub depth_hyper: usize,
    pub width_hyper: usize,
    pub rank: usize,
    /// One modulation shared by every layer instead of one per layer.
    pub shared_modulation: bool,
    pub laplacian: LaplacianMode,
    pub laplacian_cap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 1,
            param_dim: 1,
            depth_main: 7,
            width_main: 64,
            depth_hyper: 3,
            width_hyper: 15,
            rank: 3,
            shared_modulation: false,
            laplacian: LaplacianMode::Exact,
            laplacian_cap: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("dim", self.dim >= 1),
            ("depth_main", self.depth_main >= 1),
            ("width_main", self.width_main >= 1),
            ("depth_hyper", self.depth_hyper >= 1),
            ("width_hyper", self.width_hyper >= 1),
        ];
        for (field, ok) in checks {
            if !ok {
                return Err(Error::config(format!("model.{field}"), "must be positive"));
            }
        }
        if let LaplacianMode::Hutchinson { probes: 0 } = self.laplacian {
            return Err(Error::config("model.laplacian.probes", "must be positive"));
        }
        Ok(())
    }

    /// Whether Laplacians of this model are stochastic estimates.
    pub fn hutchinson_active(&self) -> bool {
        matches!(self.laplacian, LaplacianMode::Hutchinson { .. }) && self.dim > self.laplacian_cap
    }

    fn n_modulations(&self) -> usize {
        if self.shared_modulation {
            1
        } else {
            self.depth_main
        }
    }
}

/// Affine maps from physical inputs to network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_shift: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub mu_shift: Vec<f64>,
    pub mu_scale: Vec<f64>,
    pub t0: f64,
    pub horizon: f64,
}

impl Normalization {
    pub fn identity(dim: usize, param_dim: usize) -> Self {
        Normalization {
            x_shift: vec![0.0; dim],
            x_scale: vec![1.0; dim],
            mu_shift: vec![0.0; param_dim],
            mu_scale: vec![1.0; param_dim],
            t0: 0.0,
            horizon: 1.0,
        }
    }

    /// Per-coordinate mean and standard deviation of all samples, parameters
    /// mapped onto `[0, 1]` over the training grid, time onto `[0, 1]`.
    pub fn from_dataset(ds: &SnapshotDataset) -> Self {
        let d = ds.dim();
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let count = (ds.data().len() / d) as f64;
        for x in ds.data().chunks_exact(d) {
            for j in 0..d {
                mean[j] += x[j] as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for x in ds.data().chunks_exact(d) {
            for j in 0..d {
                sq[j] += (x[j] as f64 - mean[j]).powi(2);
            }
        }
        let x_scale = sq.iter().map(|s| (s / count).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        let p = ds.param_dim();
        let mut mu_shift = vec![0.0; p];
        let mut mu_scale = vec![1.0; p];
        for c in 0..p {
            let lo = ds.mus().iter().map(|m| m[c]).fold(f64::INFINITY, f64::min);
            let hi = ds.mus().iter().map(|m| m[c]).fold(f64::NEG_INFINITY, f64::max);
            mu_shift[c] = lo;
            if hi > lo {
                mu_scale[c] = hi - lo;
            }
        }
        Normalization { x_shift: mean, x_scale, mu_shift, mu_scale, t0: ds.t0(), horizon: ds.horizon() }
    }

    pub fn tau(&self, t: f64) -> f64 {
        (t - self.t0) / self.horizon
    }

    pub fn time(&self, tau: f64) -> f64 {
        self.t0 + tau * self.horizon
    }

    fn mu(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter().zip(&self.mu_shift).zip(&self.mu_scale).map(|((m, s), c)| (m - s) / c).collect()
    }
}

/// `(s, grad_x s, laplacian_x s, d s / d tau)` at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldJet {
    pub s: f64,
    pub grad_x: Vec<f64>,
    pub laplacian: f64,
    pub dt: f64,
}

/// Weights of one block's contribution
/// `value * sum s + tau * sum ds/dtau + grad * sum |grad s|^2 / 2 + lap * sum lap s`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlockCoeffs {
    pub value: f64,
    pub tau: f64,
    pub grad: f64,
    pub lap: f64,
}

/// Unweighted sums over a block. Terms whose coefficient was zero are only
/// filled when they came for free.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlockSums {
    pub value: f64,
    pub tau: f64,
    pub half_grad_sq: f64,
    pub laplacian: f64,
}

impl BlockSums {
    pub fn weighted(&self, c: &BlockCoeffs) -> f64 {
        c.value * self.value + c.tau * self.tau + c.grad * self.half_grad_sq + c.lap * self.laplacian
    }

    pub fn from_jets(jets: &[FieldJet]) -> Self {
        let mut s = BlockSums::default();
        for j in jets {
            s.value += j.s;
            s.tau += j.dt;
            s.half_grad_sq += 0.5 * j.grad_x.iter().map(|g| g * g).sum::<f64>();
            s.laplacian += j.laplacian;
        }
        s
    }
}

/// A trainable or analytic field that the loss and the sampler can drive.
pub trait ScalarField {
    fn dim(&self) -> usize;

    fn n_params(&self) -> usize;

    /// Sums over the points `xs` (`n x d`, row-major) at `(tau, mu)`. When
    /// `grad` is given, the parameter gradient of `BlockSums::weighted` is
    /// added into it. `probe_seed` drives stochastic Laplacians.
    fn block_objective(
        &self,
        xs: &[f64],
        tau: f64,
        mu: &[f64],
        coeffs: &BlockCoeffs,
        probe_seed: u64,
        grad: Option<&mut [f64]>,
    ) -> Result<BlockSums>;

    /// `grad_x s` at each point, written row-major into `out`.
    fn grad_x_block(&self, xs: &[f64], tau: f64, mu: &[f64], out: &mut [f64]) -> Result<()>;
}

/// One CoLoRA layer `W x + phi A (B x) + b`, detached from a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ColoraLayer {
    pub w: Matrix,
    pub a: Matrix,
    pub b: Matrix,
    pub bias: Vec<f64>,
}

impl ColoraLayer {
    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn forward(&self, x: &[f64], phi: f64) -> Result<Vec<f64>> {
        if self.bias.len() != self.w.rows() || self.a.rows() != self.w.rows() || self.b.cols() != self.w.cols() {
            return Err(Error::Shape("inconsistent CoLoRA layer".into()));
        }
        let mut out = self.w.matvec(x)?;
        let low = self.a.matvec(&self.b.matvec(x)?)?;
        for ((o, l), b) in out.iter_mut().zip(&low).zip(&self.bias) {
            *o += phi * l + b;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    main: Vec<Slot>,
    hyper: Vec<Slot>,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let mut dims = vec![cfg.dim];
        dims.extend(std::iter::repeat_n(cfg.width_main, cfg.depth_main - 1));
        dims.push(1);
        let mut main = Vec::new();
        for w in dims.windows(2) {
            let (i, o, r) = (w[0], w[1], cfg.rank);
            main.push(Slot { n_in: i, n_out: o, rank: r, w: take(o * i), a: take(o * r), b: take(r * i), bias: take(o) });
        }
        let mut dims = vec![1 + cfg.param_dim];
        dims.extend(std::iter::repeat_n(cfg.width_hyper, cfg.depth_hyper - 1));
        dims.push(cfg.n_modulations());
        let mut hyper = Vec::new();
        for w in dims.windows(2) {
            let (i, o) = (w[0], w[1]);
            let wo = take(o * i);
            let a = take(0);
            hyper.push(Slot { n_in: i, n_out: o, rank: 0, w: wo, a, b: a, bias: take(o) });
        }
        Layout { main, hyper, total: off }
    }
}

struct Pass {
    dirs: Vec<Vec<f64>>,
    coords: bool,
    lap: bool,
    lap_scale: f64,
    primary: bool,
}

/// Main network, hypernetwork and normalization in one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldModel {
    config: ModelConfig,
    norm: Normalization,
    layout: Layout,
    params: Vec<f64>,
}

impl FieldModel {
    /// Fan-in uniform weights and biases, `B` fan-in uniform, `A = 0` so
    /// the modulation path starts inactive.
    pub fn init(config: ModelConfig, norm: Normalization, seed: u64) -> Result<Self> {
        config.validate()?;
        if norm.x_shift.len() != config.dim
            || norm.x_scale.len() != config.dim
            || norm.mu_shift.len() != config.param_dim
            || norm.mu_scale.len() != config.param_dim
        {
            return Err(Error::Shape("normalization does not match the model dimensions".into()));
        }
        if !(norm.horizon > 0.0) || norm.x_scale.iter().chain(&norm.mu_scale).any(|s| !(*s > 0.0)) {
            return Err(Error::Param("normalization scales must be positive".into()));
        }
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = rng::stream(seed, rng::purpose::INIT, 0);
        for slot in layout.main.iter().chain(&layout.hyper) {
            let bound = 1.0 / (slot.n_in as f64).sqrt();
            let ranges = [(slot.w, slot.n_out * slot.n_in), (slot.b, slot.rank * slot.n_in), (slot.bias, slot.n_out)];
            for (start, len) in ranges {
                for p in &mut params[start..start + len] {
                    *p = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(FieldModel { config, norm, layout, params })
    }

    /// Rebuild from stored parts, checking the parameter count.
    pub fn from_parts(config: ModelConfig, norm: Normalization, params: Vec<f64>) -> Result<Self> {
        let mut model = FieldModel::init(config, norm, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Shape(format!("{} parameters for a model with {}", params.len(), model.params.len())));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    pub fn n_layers(&self) -> usize {
        self.layout.main.len()
    }

    /// Main-network layer `l` as a standalone CoLoRA layer.
    pub fn layer(&self, l: usize) -> ColoraLayer {
        let s = &self.layout.main[l];
        let p = &self.params;
        ColoraLayer {
            w: Matrix::from_vec(s.n_out, s.n_in, s.w(p).to_vec()).expect("layout shape"),
            a: Matrix::from_vec(s.n_out, s.rank, s.a(p).to_vec()).expect("layout shape"),
            b: Matrix::from_vec(s.rank, s.n_in, s.b(p).to_vec()).expect("layout shape"),
            bias: s.bias(p).to_vec(),
        }
    }

    /// Shift `s` by a constant through the output bias.
    pub fn add_output_bias(&mut self, c: f64) {
        let s = self.layout.main[self.layout.main.len() - 1];
        self.params[s.bias] += c;
    }

    fn mod_index(&self, layer: usize) -> usize {
        if self.config.shared_modulation {
            0
        } else {
            layer
        }
    }

    fn check_mu(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.config.param_dim {
            return Err(Error::Shape(format!("parameter of length {}, model expects {}", mu.len(), self.config.param_dim)));
        }
        Ok(())
    }

    fn hyper_forward(&self, tau: f64, mu: &[f64], caches: &mut Vec<LayerCache>) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_mu(mu)?;
        let mu_n = self.norm.mu(mu);
        let rows = 1 + mu_n.len();
        let mut input = vec![0.0; rows * 2];
        input[0] = tau;
        input[1] = 1.0;
        for (k, m) in mu_n.iter().enumerate() {
            input[(k + 1) * 2] = *m;
        }
        let ch = Channels { n: 1, dirs: 0, lap: false };
        let zeros = vec![0.0; self.layout.hyper.len()];
        let out = engine::forward(&self.params, &self.layout.hyper, &zeros, &zeros, input, ch, caches);
        let layers = self.layout.main.len();
        let phi = (0..layers).map(|l| out[self.mod_index(l) * 2]).collect::<Vec<_>>();
        let phidot = (0..layers).map(|l| out[self.mod_index(l) * 2 + 1]).collect::<Vec<_>>();
        if let Some(i) = phi.iter().chain(&phidot).position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("hypernetwork output {i} at tau = {tau}")));
        }
        Ok((phi, phidot))
    }

    /// Modulations `phi_l(tau, mu)` and their `tau` derivatives, one per layer.
    pub fn modulations(&self, tau: f64, mu: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.hyper_forward(tau, mu, &mut Vec::new())
    }

    fn plan(&self, coords: bool, lap: bool, probe_seed: u64) -> Result<Vec<Pass>> {
        let d = self.config.dim;
        let exact_lap = lap && d <= self.config.laplacian_cap;
        let probes = match (lap && !exact_lap, self.config.laplacian) {
            (false, _) => 0,
            (true, LaplacianMode::Hutchinson { probes }) => probes,
            (true, LaplacianMode::Exact) => return Err(Error::LaplacianCap { dim: d, cap: self.config.laplacian_cap }),
        };
        let mut passes = Vec::new();
        if coords || exact_lap {
            for start in (0..d).step_by(MAX_TANGENTS) {
                let dirs = (start..d.min(start + MAX_TANGENTS))
                    .map(|j| {
                        let mut e = vec![0.0; d];
                        e[j] = 1.0;
                        e
                    })
                    .collect();
                passes.push(Pass { dirs, coords: true, lap: exact_lap, lap_scale: 1.0, primary: start == 0 });
            }
        } else {
            passes.push(Pass { dirs: Vec::new(), coords: false, lap: false, lap_scale: 1.0, primary: true });
        }
        if probes > 0 {
            let mut rng = rng::stream(probe_seed, rng::purpose::PROBES, 0);
            let all: Vec<Vec<f64>> = (0..probes)
                .map(|_| (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
                .collect();
            for chunk in all.chunks(MAX_TANGENTS) {
                passes.push(Pass {
                    dirs: chunk.to_vec(),
                    coords: false,
                    lap: true,
                    lap_scale: 1.0 / probes as f64,
                    primary: false,
                });
            }
        }
        Ok(passes)
    }

    fn input_channels(&self, xs: &[f64], dirs: &[Vec<f64>], ch: Channels) -> Vec<f64> {
        let d = self.config.dim;
        let cols = ch.cols();
        let mut h = vec![0.0; d * cols];
        for j in 0..d {
            let (shift, scale) = (self.norm.x_shift[j], self.norm.x_scale[j]);
            let row = &mut h[j * cols..(j + 1) * cols];
            for i in 0..ch.n {
                row[i] = (xs[i * d + j] - shift) / scale;
            }
            for (k, dir) in dirs.iter().enumerate() {
                let v = dir[j] / scale;
                row[ch.dir(k)..ch.dir(k) + ch.n].iter_mut().for_each(|x| *x = v);
            }
        }
        h
    }

    fn points(&self, xs: &[f64]) -> Result<usize> {
        let d = self.config.dim;
        if xs.len() % d != 0 {
            return Err(Error::Shape(format!("{} coordinates is not a multiple of d = {d}", xs.len())));
        }
        Ok(xs.len() / d)
    }

    /// Run every pass of `plan`, calling `visit(pass, output)` after each
    /// forward; a returned seed vector triggers the matching reverse sweep.
    #[allow(clippy::too_many_arguments)]
    fn sweep(
        &self,
        xs: &[f64],
        tau: f64,
        mu: &[f64],
        passes: &[Pass],
        mut grad: Option<&mut [f64]>,
        mut visit: impl FnMut(&Pass, Channels, &[f64]) -> Option<Vec<f64>>,
    ) -> Result<()> {
        let n = self.points(xs)?;
        let mut hyper_caches = Vec::new();
        let (phi, phidot) = self.hyper_forward(tau, mu, &mut hyper_caches)?;
        let layers = self.layout.main.len();
        let mut phibar = vec![0.0; layers];
        let mut phidotbar = vec![0.0; layers];
        let mut caches = Vec::new();
        for pass in passes {
            let ch = Channels { n, dirs: pass.dirs.len(), lap: pass.lap };
            let input = self.input_channels(xs, &pass.dirs, ch);
            let out = engine::forward(&self.params, &self.layout.main, &phi, &phidot, input, ch, &mut caches);
            if let Some(i) = out.iter().position(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("field jet channel {} of point {} at tau = {tau}", i / n, i % n)));
            }
            let seed = visit(pass, ch, &out);
            if let (Some(seed), Some(g)) = (seed, grad.as_deref_mut()) {
                engine::backward(&self.params, g, &self.layout.main, &caches, seed, ch, &mut phibar, &mut phidotbar, false);
            }
        }
        if let Some(g) = grad {
            let n_mod = self.config.n_modulations();
            let mut out_bar = vec![0.0; n_mod * 2];
            for l in 0..layers {
                out_bar[self.mod_index(l) * 2] += phibar[l];
                out_bar[self.mod_index(l) * 2 + 1] += phidotbar[l];
            }
            let ch = Channels { n: 1, dirs: 0, lap: false };
            let hl = self.layout.hyper.len();
            let (mut zb, mut zdb) = (vec![0.0; hl], vec![0.0; hl]);
            engine::backward(&self.params, g, &self.layout.hyper, &hyper_caches, out_bar, ch, &mut zb, &mut zdb, false);
        }
        Ok(())
    }

    /// Jets at every point of `xs` (`n x d`) for one `(tau, mu)`.
    pub fn batch_jets(&self, xs: &[f64], tau: f64, mu: &[f64], need_laplacian: bool) -> Result<Vec<FieldJet>> {
        let n = self.points(xs)?;
        let d = self.config.dim;
        let mut jets = vec![FieldJet { s: 0.0, grad_x: vec![0.0; d], laplacian: 0.0, dt: 0.0 }; n];
        let passes = self.plan(true, need_laplacian, 0)?;
        let mut coord = 0;
        self.sweep(xs, tau, mu, &passes, None, |pass, ch, out| {
            for (i, jet) in jets.iter_mut().enumerate() {
                if pass.primary {
                    jet.s = out[i];
                    jet.dt = out[ch.n + i];
                }
                if pass.coords {
                    for k in 0..ch.dirs {
                        jet.grad_x[coord + k] = out[ch.dir(k) + i];
                    }
                }
                if pass.lap {
                    jet.laplacian += pass.lap_scale * out[ch.lap() + i];
                }
            }
            if pass.coords {
                coord += ch.dirs;
            }
            None
        })?;
        Ok(jets)
    }

    /// Jet at one point; `tau` is normalized time.
    pub fn eval_jet(&self, x: &[f64], tau: f64, mu: &[f64], need_laplacian: bool) -> Result<FieldJet> {
        if x.len() != self.config.dim {
            return Err(Error::Shape(format!("point of length {}, model expects {}", x.len(), self.config.dim)));
        }
        Ok(self.batch_jets(x, tau, mu, need_laplacian)?.pop().expect("one point"))
    }

    /// `s` at every point of `xs`.
    pub fn eval_batch(&self, xs: &[f64], tau: f64, mu: &[f64]) -> Result<Vec<f64>> {
        let passes = self.plan(false, false, 0)?;
        let mut values = Vec::new();
        self.sweep(xs, tau, mu, &passes, None, |_, ch, out| {
            values.extend_from_slice(&out[..ch.n]);
            None
        })?;
        Ok(values)
    }
}

impl ScalarField for FieldModel {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn n_params(&self) -> usize {
        self.params.len()
    }

    fn block_objective(
        &self,
        xs: &[f64],
        tau: f64,
        mu: &[f64],
        coeffs: &BlockCoeffs,
        probe_seed: u64,
        grad: Option<&mut [f64]>,
    ) -> Result<BlockSums> {
        if let Some(g) = grad.as_deref() {
            if g.len() != self.params.len() {
                return Err(Error::Shape(format!("gradient buffer of {} for {} parameters", g.len(), self.params.len())));
            }
        }
        let passes = self.plan(coeffs.grad != 0.0, coeffs.lap != 0.0, probe_seed)?;
        let mut sums = BlockSums::default();
        self.sweep(xs, tau, mu, &passes, grad, |pass, ch, out| {
            let n = ch.n;
            let mut seed = vec![0.0; ch.cols()];
            if pass.primary {
                sums.value += out[..n].iter().sum::<f64>();
                sums.tau += out[n..2 * n].iter().sum::<f64>();
                seed[..n].iter_mut().for_each(|v| *v = coeffs.value);
                seed[n..2 * n].iter_mut().for_each(|v| *v = coeffs.tau);
            }
            if pass.coords {
                let start = ch.dir(0);
                let end = ch.dir(ch.dirs);
                sums.half_grad_sq += 0.5 * out[start..end].iter().map(|g| g * g).sum::<f64>();
                for (sd, g) in seed[start..end].iter_mut().zip(&out[start..end]) {
                    *sd = coeffs.grad * g;
                }
            }
            if pass.lap {
                let start = ch.lap();
                sums.laplacian += pass.lap_scale * out[start..start + n].iter().sum::<f64>();
                seed[start..start + n].iter_mut().for_each(|v| *v = coeffs.lap * pass.lap_scale);
            }
            Some(seed)
        })?;
        Ok(sums)
    }

    fn grad_x_block(&self, xs: &[f64], tau: f64, mu: &[f64], out: &mut [f64]) -> Result<()> {
        if out.len() != xs.len() {
            return Err(Error::Shape("gradient output must match the point block".into()));
        }
        let d = self.config.dim;
        let passes = self.plan(true, false, 0)?;
        let mut coord = 0;
        self.sweep(xs, tau, mu, &passes, None, |pass, ch, res| {
            for k in 0..ch.dirs {
                for i in 0..ch.n {
                    out[i * d + coord + k] = res[ch.dir(k) + i];
                }
            }
            coord += pass.dirs.len();
            None
        })
    }
}

#[cfg(test)]
mod tests;

/// `s(x, tau, mu) + f(tau)` for a polynomial `f` with coefficients in
/// ascending powers. Spatial derivatives and parameter gradients are those
/// of the wrapped field.
pub struct GaugeShift<'a, F: ScalarField> {
    pub inner: &'a F,
    pub coeffs: Vec<f64>,
}

impl<F: ScalarField> GaugeShift<'_, F> {
    fn value(&self, tau: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * tau + c)
    }

    fn derivative(&self, tau: f64) -> f64 {
        self.coeffs.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, c)| acc * tau + k as f64 * c)
    }
}

impl<F: ScalarField> ScalarField for GaugeShift<'_, F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn block_objective(
        &self,
        xs: &[f64],
        tau: f64,
        mu: &[f64],
        coeffs: &BlockCoeffs,
        probe_seed: u64,
        grad: Option<&mut [f64]>,
    ) -> Result<BlockSums> {
        let mut sums = self.inner.block_objective(xs, tau, mu, coeffs, probe_seed, grad)?;
        let n = (xs.len() / self.dim()) as f64;
        sums.value += n * self.value(tau);
        sums.tau += n * self.derivative(tau);
        Ok(sums)
    }

    fn grad_x_block(&self, xs: &[f64], tau: f64, mu: &[f64], out: &mut [f64]) -> Result<()> {
        self.inner.grad_x_block(xs, tau, mu, out)
    }
}
