//! The empirical action-matching objective
//!
//! ```text
//! E = mean_mu [ sum_n w_n mean_x( |grad s|^2 / 2 + ds/dtau + eps^2/2 lap s )(tau_n)
//!               - ( mean_x s(tau = 1) - mean_x s(tau = 0) ) ]
//! ```
//!
//! with quadrature nodes `tau_n` on normalized time `[0, 1]`, its parameter
//! gradient, and the unweighted interior profile `q(s)(tau)`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::SnapshotDataset;
use crate::model::{BlockCoeffs, Normalization, ScalarField};
use crate::quadrature::{QuadratureKind, QuadratureRule};
use crate::rng;
use crate::{Error, Result};

/// One minibatch: `n_mu` parameters, `n_x` samples at every quadrature node
/// and independent `n_x` draws at both endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub mus: Vec<Vec<f64>>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub n_x: usize,
    pub dim: usize,
    /// `[mu][node]` blocks of `n_x x d` samples.
    pub interior: Vec<Vec<f64>>,
    pub start: Vec<Vec<f64>>,
    pub end: Vec<Vec<f64>>,
    /// Seed for stochastic Laplacian probes.
    pub seed: u64,
}

impl Batch {
    pub fn block(&self, k: usize, n: usize) -> &[f64] {
        &self.interior[k * self.nodes.len() + n]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub interior: f64,
    pub boundary_t1: f64,
    pub boundary_t0: f64,
    /// `q_n`: the interior integrand averaged over parameters and samples.
    pub node_values: Vec<f64>,
    pub eps: f64,
}

/// Draws minibatches from a dataset for a fixed time normalization.
pub struct BatchSampler<'a> {
    data: &'a SnapshotDataset,
    norm: &'a Normalization,
    kind: QuadratureKind,
    n_t: usize,
    n_x: usize,
    n_mu: usize,
    fixed_rule: Option<QuadratureRule>,
    end_brackets: [usize; 2],
}

impl<'a> BatchSampler<'a> {
    /// Fails with a dataset error when the data has no snapshot exactly at
    /// either end of the normalized window, since the boundary terms need
    /// both.
    pub fn new(
        data: &'a SnapshotDataset,
        norm: &'a Normalization,
        kind: QuadratureKind,
        n_t: usize,
        n_x: usize,
        n_mu: usize,
    ) -> Result<Self> {
        if n_x == 0 || n_mu == 0 {
            return Err(Error::Param("n_x and n_mu must be positive".into()));
        }
        if data.param_dim() != norm.mu_shift.len() || data.dim() != norm.x_shift.len() {
            return Err(Error::Shape("dataset dimensions do not match the model".into()));
        }
        let mut end_brackets = [0; 2];
        for (slot, tau) in [0.0, 1.0].into_iter().enumerate() {
            let t = norm.time(tau);
            match data.bracket(t) {
                Ok((j, w)) if w == 0.0 => end_brackets[slot] = j,
                _ => {
                    return Err(Error::Dataset(format!(
                        "no snapshot at t = {t}; both endpoint snapshots are required for the boundary terms"
                    )))
                }
            }
        }
        let fixed_rule =
            if kind.is_deterministic() { Some(QuadratureRule::new(kind, n_t, 0.0, 1.0, None)?) } else { None };
        if let Some(rule) = &fixed_rule {
            for &tau in &rule.nodes {
                let (_, w) = data.bracket(norm.time(tau))?;
                if w != 0.0 && !data.paired() {
                    return Err(Error::Dataset(format!(
                        "dataset is not trajectory-paired and {kind} node tau = {tau} falls between snapshots; \
                         use snapshot-aligned simpson or trapezoid nodes"
                    )));
                }
            }
        } else if !data.paired() {
            return Err(Error::Dataset("monte-carlo nodes need a trajectory-paired dataset".into()));
        }
        Ok(BatchSampler { data, norm, kind, n_t, n_x, n_mu, fixed_rule, end_brackets })
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    /// The minibatch for training step `step`, reproducible from `seed`.
    pub fn draw(&self, seed: u64, step: u64) -> Result<Batch> {
        let step_seed = rng::stream(seed, rng::purpose::BATCH, step).random::<u64>();
        let rule = match &self.fixed_rule {
            Some(r) => r.clone(),
            None => QuadratureRule::new(self.kind, self.n_t, 0.0, 1.0, Some(step_seed))?,
        };
        let mut rng = rng::stream(step_seed, rng::purpose::BATCH, 0);
        let n_grid = self.data.n_mu();
        let picks: Vec<usize> = if self.n_mu >= n_grid {
            (0..n_grid).collect()
        } else {
            let mut p = index::sample(&mut rng, n_grid, self.n_mu).into_vec();
            p.sort_unstable();
            p
        };
        let d = self.data.dim();
        let n_all = self.data.n_samples();
        let brackets = rule.nodes.iter().map(|&tau| self.data.bracket(self.norm.time(tau))).collect::<Result<Vec<_>>>()?;
        let mut interior = Vec::with_capacity(picks.len() * brackets.len());
        let mut start = Vec::with_capacity(picks.len());
        let mut end = Vec::with_capacity(picks.len());
        let mut buf = vec![0.0; d];
        for &k in &picks {
            for &(j, w) in &brackets {
                let mut block = Vec::with_capacity(self.n_x * d);
                for _ in 0..self.n_x {
                    self.data.interpolate_bracket(k, rng.random_range(0..n_all), j, w, &mut buf);
                    block.extend_from_slice(&buf);
                }
                interior.push(block);
            }
            for (slot, out) in [&mut start, &mut end].into_iter().enumerate() {
                let j = self.end_brackets[slot];
                let mut block = Vec::with_capacity(self.n_x * d);
                for _ in 0..self.n_x {
                    block.extend(self.data.sample(k, j, rng.random_range(0..n_all)).iter().map(|&v| v as f64));
                }
                out.push(block);
            }
        }
        Ok(Batch {
            mus: picks.iter().map(|&k| self.data.mus()[k].clone()).collect(),
            nodes: rule.nodes,
            weights: rule.weights,
            n_x: self.n_x,
            dim: d,
            interior,
            start,
            end,
            seed: step_seed,
        })
    }
}

/// Objective on one batch; with `grad`, its parameter gradient is added in.
pub fn empirical_loss<F: ScalarField>(
    field: &F,
    batch: &Batch,
    eps: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    if batch.dim != field.dim() {
        return Err(Error::Shape(format!("batch of dimension {} for a field of dimension {}", batch.dim, field.dim())));
    }
    let n_mu = batch.mus.len() as f64;
    let n_x = batch.n_x as f64;
    let half_eps2 = 0.5 * eps * eps;
    let mut out = LossBreakdown { node_values: vec![0.0; batch.nodes.len()], eps, ..Default::default() };
    for (k, mu) in batch.mus.iter().enumerate() {
        for (n, (&tau, &w)) in batch.nodes.iter().zip(&batch.weights).enumerate() {
            let scale = w / (n_x * n_mu);
            let c = BlockCoeffs { value: 0.0, tau: scale, grad: scale, lap: scale * half_eps2 };
            let probe = batch.seed ^ ((k * batch.nodes.len() + n) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let sums = field.block_objective(batch.block(k, n), tau, mu, &c, probe, grad.as_deref_mut())?;
            let q = (sums.half_grad_sq + sums.tau + half_eps2 * sums.laplacian) / n_x;
            out.node_values[n] += q / n_mu;
            out.interior += w * q / n_mu;
        }
        let c1 = BlockCoeffs { value: -1.0 / (n_x * n_mu), ..Default::default() };
        let s1 = field.block_objective(&batch.end[k], 1.0, mu, &c1, 0, grad.as_deref_mut())?;
        let c0 = BlockCoeffs { value: 1.0 / (n_x * n_mu), ..Default::default() };
        let s0 = field.block_objective(&batch.start[k], 0.0, mu, &c0, 0, grad.as_deref_mut())?;
        out.boundary_t1 += s1.value / (n_x * n_mu);
        out.boundary_t0 += s0.value / (n_x * n_mu);
    }
    out.total = out.interior - (out.boundary_t1 - out.boundary_t0);
    if !out.total.is_finite() {
        return Err(Error::non_finite("loss total"));
    }
    if let Some(g) = grad {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("loss gradient entry {i}")));
        }
    }
    Ok(out)
}

/// `q(s)(tau) = mean_mu mean_x [ |grad s|^2 / 2 + ds/dtau + eps^2/2 lap s ]`
/// at each normalized time, averaged over every parameter of `data` and up
/// to `max_samples` trajectories (interpolated between snapshots).
pub fn interior_profile<F: ScalarField>(
    field: &F,
    data: &SnapshotDataset,
    norm: &Normalization,
    taus: &[f64],
    eps: f64,
    max_samples: usize,
) -> Result<Vec<f64>> {
    let d = data.dim();
    let n = data.n_samples().min(max_samples.max(1));
    let half_eps2 = 0.5 * eps * eps;
    let c = BlockCoeffs { value: 0.0, tau: 1.0, grad: 1.0, lap: half_eps2 };
    let mut profile = Vec::with_capacity(taus.len());
    let mut buf = vec![0.0; d];
    for (idx, &tau) in taus.iter().enumerate() {
        let (j, w) = data.bracket(norm.time(tau))?;
        if w != 0.0 && !data.paired() {
            return Err(Error::Dataset("profile between snapshots needs a trajectory-paired dataset".into()));
        }
        let mut acc = 0.0;
        for (k, mu) in data.mus().iter().enumerate() {
            let mut xs = Vec::with_capacity(n * d);
            for i in 0..n {
                data.interpolate_bracket(k, i, j, w, &mut buf);
                xs.extend_from_slice(&buf);
            }
            let sums = field.block_objective(&xs, tau, mu, &c, idx as u64, None)?;
            acc += (sums.half_grad_sq + sums.tau + half_eps2 * sums.laplacian) / n as f64;
        }
        profile.push(acc / data.n_mu() as f64);
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Provenance;
    use crate::model::{BlockSums, FieldJet, FieldModel, GaugeShift, ModelConfig};

    /// Analytic field given pointwise by a jet closure.
    struct Analytic<F: Fn(&[f64], f64) -> FieldJet> {
        dim: usize,
        jet: F,
    }

    impl<F: Fn(&[f64], f64) -> FieldJet> ScalarField for Analytic<F> {
        fn dim(&self) -> usize {
            self.dim
        }
        fn n_params(&self) -> usize {
            0
        }
        fn block_objective(
            &self,
            xs: &[f64],
            tau: f64,
            _mu: &[f64],
            _c: &BlockCoeffs,
            _seed: u64,
            _grad: Option<&mut [f64]>,
        ) -> Result<BlockSums> {
            let jets: Vec<_> = xs.chunks(self.dim).map(|x| (self.jet)(x, tau)).collect();
            Ok(BlockSums::from_jets(&jets))
        }
        fn grad_x_block(&self, xs: &[f64], tau: f64, _mu: &[f64], out: &mut [f64]) -> Result<()> {
            for (x, o) in xs.chunks(self.dim).zip(out.chunks_mut(self.dim)) {
                o.copy_from_slice(&(self.jet)(x, tau).grad_x);
            }
            Ok(())
        }
    }

    /// Two parameters, 9 snapshot times on [0, 2], drifting noisy samples.
    fn drift_data(paired: bool) -> SnapshotDataset {
        let times: Vec<f64> = (0..9).map(|j| j as f64 * 0.25).collect();
        let mut rng = rng::stream(3, rng::purpose::GENERATOR, 0);
        let mut data = Vec::new();
        for k in 0..2 {
            let base: Vec<[f64; 2]> = (0..40).map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]).collect();
            for &t in &times {
                for b in &base {
                    data.push((b[0] + (1.0 + k as f64) * t) as f32);
                    data.push((b[1] - 0.5 * t * t) as f32);
                }
            }
        }
        SnapshotDataset::new(2, 40, times, vec![vec![1.0], vec![2.0]], paired, Provenance::new("drift", serde_json::Value::Null, 3), data)
            .unwrap()
    }

    fn model(ds: &SnapshotDataset) -> FieldModel {
        let cfg = ModelConfig { dim: 2, param_dim: 1, depth_main: 3, width_main: 8, depth_hyper: 2, width_hyper: 5, ..Default::default() };
        let mut m = FieldModel::init(cfg, Normalization::from_dataset(ds), 1).unwrap();
        let mut rng = rng::stream(4, rng::purpose::INIT, 9);
        for p in m.params_mut() {
            *p += rng.random_range(-0.2..0.2);
        }
        m
    }

    #[test]
    fn constant_field_has_zero_loss() {
        let ds = drift_data(true);
        let norm = Normalization::from_dataset(&ds);
        let sampler = BatchSampler::new(&ds, &norm, QuadratureKind::Simpson, 9, 16, 2).unwrap();
        let batch = sampler.draw(0, 0).unwrap();
        let f = Analytic { dim: 2, jet: |_: &[f64], _| FieldJet { s: 3.0, grad_x: vec![0.0; 2], laplacian: 0.0, dt: 0.0 } };
        let l = empirical_loss(&f, &batch, 0.05, None).unwrap();
        assert_eq!((l.total, l.interior, l.boundary_t1 - l.boundary_t0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn cubic_in_time_cancels_under_simpson() {
        let ds = drift_data(true);
        let norm = Normalization::from_dataset(&ds);
        let sampler = BatchSampler::new(&ds, &norm, QuadratureKind::Simpson, 5, 8, 2).unwrap();
        let batch = sampler.draw(0, 0).unwrap();
        let f = Analytic {
            dim: 2,
            jet: |_: &[f64], t: f64| FieldJet {
                s: 1.0 - 2.0 * t + 0.5 * t * t + 3.0 * t.powi(3),
                grad_x: vec![0.0; 2],
                laplacian: 0.0,
                dt: -2.0 + t + 9.0 * t * t,
            },
        };
        assert!(empirical_loss(&f, &batch, 0.0, None).unwrap().total.abs() < 1e-10);
    }

    #[test]
    fn breakdown_is_consistent_and_deterministic() {
        let ds = drift_data(true);
        let m = model(&ds);
        let sampler = BatchSampler::new(&ds, m.normalization(), QuadratureKind::GaussLegendre, 6, 12, 1).unwrap();
        let a = empirical_loss(&m, &sampler.draw(5, 3).unwrap(), 0.05, None).unwrap();
        let b = empirical_loss(&m, &sampler.draw(5, 3).unwrap(), 0.05, None).unwrap();
        assert_eq!(a, b);
        assert!((a.total - (a.interior - (a.boundary_t1 - a.boundary_t0))).abs() < 1e-12);
        let c = empirical_loss(&m, &sampler.draw(5, 4).unwrap(), 0.05, None).unwrap();
        assert_ne!(a.total, c.total);
    }

    #[test]
    fn gauge_shift_leaves_loss_unchanged() {
        let ds = drift_data(true);
        let m = model(&ds);
        let coeffs = vec![0.3, -1.2, 2.0, 0.7];
        let shifted = GaugeShift { inner: &m, coeffs: coeffs.clone() };
        let simpson = BatchSampler::new(&ds, m.normalization(), QuadratureKind::Simpson, 9, 16, 2).unwrap();
        let batch = simpson.draw(1, 0).unwrap();
        let base = empirical_loss(&m, &batch, 0.02, None).unwrap().total;
        assert!((empirical_loss(&shifted, &batch, 0.02, None).unwrap().total - base).abs() < 1e-10);
        // gauss with n nodes integrates degree 2n-1 exactly
        let gauss = BatchSampler::new(&ds, m.normalization(), QuadratureKind::GaussLegendre, 3, 16, 2).unwrap();
        let batch = gauss.draw(1, 0).unwrap();
        let quintic = GaugeShift { inner: &m, coeffs: vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6] };
        let base = empirical_loss(&m, &batch, 0.0, None).unwrap().total;
        assert!((empirical_loss(&quintic, &batch, 0.0, None).unwrap().total - base).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = drift_data(true);
        let m = model(&ds);
        let sampler = BatchSampler::new(&ds, m.normalization(), QuadratureKind::Simpson, 5, 6, 2).unwrap();
        let batch = sampler.draw(2, 0).unwrap();
        let mut g = vec![0.0; m.n_params()];
        empirical_loss(&m, &batch, 0.1, Some(&mut g)).unwrap();
        let h = 1e-6;
        for i in (0..m.n_params()).step_by(7) {
            let mut p = m.clone();
            p.params_mut()[i] += h;
            let fp = empirical_loss(&p, &batch, 0.1, None).unwrap().total;
            p.params_mut()[i] -= 2.0 * h;
            let fm = empirical_loss(&p, &batch, 0.1, None).unwrap().total;
            let fd = (fp - fm) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-6 * fd.abs().max(1e-2), "param {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn eps_limit_is_continuous() {
        let ds = drift_data(true);
        let m = model(&ds);
        let sampler = BatchSampler::new(&ds, m.normalization(), QuadratureKind::Simpson, 5, 8, 2).unwrap();
        let batch = sampler.draw(0, 0).unwrap();
        let at0 = empirical_loss(&m, &batch, 0.0, None).unwrap().total;
        let small = empirical_loss(&m, &batch, 1e-6, None).unwrap().total;
        assert!((at0 - small).abs() < 1e-9);
    }

    #[test]
    fn sampler_errors() {
        let ds = drift_data(true);
        let mut norm = Normalization::from_dataset(&ds);
        norm.horizon = 2.1;
        assert!(matches!(BatchSampler::new(&ds, &norm, QuadratureKind::Simpson, 5, 4, 1), Err(Error::Dataset(_))));
        let unpaired = drift_data(false);
        let norm = Normalization::from_dataset(&unpaired);
        assert!(matches!(BatchSampler::new(&unpaired, &norm, QuadratureKind::GaussLegendre, 4, 4, 1), Err(Error::Dataset(_))));
        assert!(BatchSampler::new(&unpaired, &norm, QuadratureKind::Simpson, 9, 4, 1).is_ok());
    }

    #[test]
    fn monte_carlo_nodes_change_every_step() {
        let ds = drift_data(true);
        let norm = Normalization::from_dataset(&ds);
        let s = BatchSampler::new(&ds, &norm, QuadratureKind::MonteCarlo, 8, 4, 1).unwrap();
        let (a, b) = (s.draw(0, 0).unwrap(), s.draw(0, 1).unwrap());
        assert_ne!(a.nodes, b.nodes);
        assert_eq!(a.weights, vec![0.125; 8]);
        let fixed = BatchSampler::new(&ds, &norm, QuadratureKind::Trapezoid, 8, 4, 1).unwrap();
        assert_eq!(fixed.draw(0, 0).unwrap().nodes, fixed.draw(0, 1).unwrap().nodes);
    }

    #[test]
    fn profile_examples() {
        let ds = drift_data(true);
        let norm = Normalization::from_dataset(&ds);
        let c = Analytic { dim: 2, jet: |_: &[f64], _| FieldJet { s: 1.0, grad_x: vec![0.0; 2], laplacian: 0.0, dt: 0.0 } };
        assert_eq!(interior_profile(&c, &ds, &norm, &[0.0, 0.3, 1.0], 0.1, 100).unwrap(), vec![0.0; 3]);
        let fresh = FieldModel::init(
            ModelConfig { dim: 2, param_dim: 1, depth_main: 3, width_main: 8, ..Default::default() },
            norm.clone(),
            0,
        )
        .unwrap();
        // samples that do not move: a time-independent model gives a flat profile
        let snap = ds.snapshot(0, 0).to_vec();
        let data: Vec<f32> = (0..9).flat_map(|_| snap.clone()).collect();
        let still =
            SnapshotDataset::new(2, 40, ds.times().to_vec(), vec![vec![1.0]], true, ds.provenance().clone(), data).unwrap();
        let q = interior_profile(&fresh, &still, &norm, &[0.0, 0.3, 0.55, 1.0], 0.0, 100).unwrap();
        assert!(q.iter().all(|v| *v == q[0]), "{q:?}");
    }
}
