//! Adam with cosine learning-rate decay over a fixed iteration budget.
//!
//! A non-finite loss, gradient or weight stops the run: the report records
//! the iteration and the model keeps its last finite weights.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::SnapshotDataset;
use crate::loss::{empirical_loss, BatchSampler};
use crate::model::FieldModel;
use crate::quadrature::QuadratureKind;
use crate::store;
use crate::{Error, Result};

/// Noise levels searched for the entropic variant.
pub const EPS_GRID: [f64; 5] = [0.0, 0.01, 0.02, 0.05, 0.07];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub iterations: usize,
    pub n_x: usize,
    /// Quadrature node count; Simpson needs it odd.
    pub n_t: usize,
    /// Parameters per step; `None` uses the full training grid.
    pub n_mu: Option<usize>,
    pub eps: f64,
    /// Accept a noise level outside [`EPS_GRID`].
    pub eps_off_grid: bool,
    pub quadrature: QuadratureKind,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; off unless set.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-3,
            iterations: 25_000,
            n_x: 256,
            n_t: 257,
            n_mu: None,
            eps: 0.0,
            eps_off_grid: false,
            quadrature: QuadratureKind::Simpson,
            seed: 0,
            adam: AdamConfig::default(),
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config("train.lr0", "must be positive"));
        }
        if self.n_x == 0 {
            return Err(Error::config("train.n_x", "must be positive"));
        }
        if self.n_t < 2 {
            return Err(Error::config("train.n_t", "needs at least 2 nodes"));
        }
        if self.quadrature == QuadratureKind::Simpson && self.n_t % 2 == 0 {
            return Err(Error::config("train.n_t", "simpson needs an odd node count"));
        }
        if self.n_mu == Some(0) {
            return Err(Error::config("train.n_mu", "must be positive"));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::config("train.eps", "must be a nonnegative number"));
        }
        if !self.eps_off_grid && !EPS_GRID.contains(&self.eps) {
            return Err(Error::config(
                "train.eps",
                format!("{} is not in {EPS_GRID:?}; set eps_off_grid = true to use it", self.eps),
            ));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::config("train.adam", "betas must lie in [0, 1) and eps must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("train.clip_norm", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Bias-corrected Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Adam { config, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, weights: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if weights.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state of {} for {} weights and {} gradients",
                self.m.len(),
                weights.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::non_finite(format!("gradient entry {i}")));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((w, g), m), v) in weights.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        Ok(())
    }
}

/// `lr0 (1 + cos(pi iter / total)) / 2`.
pub fn cosine_lr(iter: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = iter.min(total) as f64 / total as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub loss_trace: Vec<f64>,
    pub iterations_completed: usize,
    pub diverged: bool,
    pub first_bad_iteration: Option<usize>,
    pub divergence: Option<String>,
    pub hutchinson_laplacian: bool,
    pub checkpoint_id: String,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }
}

pub struct TrainOutcome {
    pub model: FieldModel,
    pub report: TrainReport,
    pub seconds: f64,
}

/// Train `model` on `data`; `progress(iter, loss)` runs after every step.
pub fn train_with(
    mut model: FieldModel,
    data: &SnapshotDataset,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    let started = Instant::now();
    let norm = model.normalization().clone();
    let n_mu = config.n_mu.unwrap_or(data.n_mu());
    let sampler = BatchSampler::new(data, &norm, config.quadrature, config.n_t, config.n_x, n_mu)?;
    let mut adam = Adam::new(model.params().len(), config.adam);
    let mut grad = vec![0.0; model.params().len()];
    let mut trace = Vec::with_capacity(config.iterations);
    let mut failure = None;
    for iter in 0..config.iterations {
        let batch = sampler.draw(config.seed, iter as u64)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = match empirical_loss(&model, &batch, config.eps, Some(&mut grad)) {
            Ok(l) => l.total,
            Err(Error::NonFinite { location }) => {
                failure = Some((iter, location));
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(c) = config.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                grad.iter_mut().for_each(|g| *g *= c / norm);
            }
        }
        let lr = cosine_lr(iter, config.iterations, config.lr0);
        let before = model.params().to_vec();
        if let Err(Error::NonFinite { location }) = adam.step(model.params_mut(), &grad, lr) {
            failure = Some((iter, location));
            break;
        }
        if let Some(i) = model.params().iter().position(|w| !w.is_finite()) {
            model.params_mut().copy_from_slice(&before);
            failure = Some((iter, format!("weight {i}")));
            break;
        }
        trace.push(loss);
        progress(iter, loss);
    }
    let report = TrainReport {
        config: config.clone(),
        iterations_completed: trace.len(),
        loss_trace: trace,
        diverged: failure.is_some(),
        first_bad_iteration: failure.as_ref().map(|f| f.0),
        divergence: failure.map(|f| f.1),
        hutchinson_laplacian: model.config().hutchinson_active() && config.eps > 0.0,
        checkpoint_id: store::checkpoint_id(&model),
    };
    Ok(TrainOutcome { model, report, seconds: started.elapsed().as_secs_f64() })
}

pub fn train(model: FieldModel, data: &SnapshotDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, config, |_, _| {})
}

/// Score every candidate noise level with `score` (lower is better) and
/// return the scores in order plus the index of the best finite one.
pub fn select_eps(candidates: &[f64], mut score: impl FnMut(f64) -> Result<f64>) -> Result<(Vec<f64>, Option<usize>)> {
    let mut scores = Vec::with_capacity(candidates.len());
    for &eps in candidates {
        scores.push(score(eps)?);
    }
    let best = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i);
    Ok((scores, best))
}
