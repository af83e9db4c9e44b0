//! Distances between ensembles and the relative-error summaries used to
//! compare predicted and reference trajectories.

mod sinkhorn;
mod wasserstein;

use serde::{Deserialize, Serialize};

pub use sinkhorn::{default_blur, sinkhorn, SinkhornResult, MAX_ITERATIONS as SINKHORN_MAX_ITERATIONS};
pub use wasserstein::{projection_directions, sliced_w2, w2_squared_1d, wasserstein};

use crate::datagen::{pic, SnapshotDataset};
use crate::{Error, Result};

/// Electric energy of a 1D1V ensemble (`n x 2`, position first) on the
/// periodic domain `[0, length)`.
pub fn electric_energy(ensemble: &[f64], dim: usize, mu: f64, length: f64, cells: usize) -> Result<f64> {
    if dim != 2 {
        return Err(Error::Shape(format!("electric energy needs (x, v) samples, got dimension {dim}")));
    }
    if !(length > 0.0 && length.is_finite()) || cells < 2 {
        return Err(Error::Param(format!("periodic domain of length {length} with {cells} cells")));
    }
    let xs: Vec<f64> = ensemble.chunks_exact(2).map(|p| p[0]).collect();
    pic::electric_energy(&xs, mu, length, cells)
}

/// Average of per-time relative errors; times with a zero reference are
/// left out and listed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelError {
    pub value: f64,
    pub excluded: Vec<usize>,
}

fn mean_relative(pairs: impl Iterator<Item = (f64, f64)>) -> Result<RelError> {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut excluded = Vec::new();
    for (k, (num, den)) in pairs.enumerate() {
        if den == 0.0 {
            excluded.push(k);
        } else {
            sum += num / den;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Range("every reference value is zero".into()));
    }
    Ok(RelError { value: sum / used as f64, excluded })
}

/// `mean_t |e_true(t) - e_pred(t)| / |e_true(t)|`.
pub fn relative_trace_error(truth: &[f64], pred: &[f64]) -> Result<RelError> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::Shape(format!("traces of length {} and {}", truth.len(), pred.len())));
    }
    mean_relative(truth.iter().zip(pred).map(|(t, p)| ((t - p).abs(), t.abs())))
}

/// `mean_t |E true(t) - E pred(t)| / |E true(t)|` with Euclidean norms of the
/// per-time ensemble means (`means[t]` has one entry per coordinate).
pub fn relative_mean_error(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<RelError> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::Shape(format!("mean curves of length {} and {}", truth.len(), pred.len())));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut pairs = Vec::with_capacity(truth.len());
    for (t, p) in truth.iter().zip(pred) {
        if t.len() != p.len() {
            return Err(Error::Shape("mean vectors differ in dimension".into()));
        }
        let diff: Vec<f64> = t.iter().zip(p).map(|(a, b)| a - b).collect();
        pairs.push((norm(&diff), norm(t)));
    }
    mean_relative(pairs.into_iter())
}

fn ensemble_mean(xs: &[f64], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    let n = (xs.len() / dim) as f64;
    for x in xs.chunks_exact(dim) {
        for (a, b) in m.iter_mut().zip(x) {
            *a += b / n;
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlasovDomain {
    pub length: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub projections: usize,
    pub projection_seed: u64,
    /// Time indices at which the Sinkhorn divergence is computed.
    pub sinkhorn_times: Vec<usize>,
    pub sinkhorn_blur: Option<f64>,
    pub sinkhorn_threshold: f64,
    /// Leading samples used for Sinkhorn, which is quadratic in the count.
    pub sinkhorn_max_points: usize,
    /// Set for 1D1V plasma ensembles to report the electric-energy error.
    pub vlasov: Option<VlasovDomain>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            projections: 64,
            projection_seed: 0,
            sinkhorn_times: Vec::new(),
            sinkhorn_blur: None,
            sinkhorn_threshold: 1e-3,
            sinkhorn_max_points: 1000,
            vlasov: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornAt {
    pub time_index: usize,
    pub result: SinkhornResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mu: Vec<f64>,
    pub times: Vec<f64>,
    pub w2: Vec<f64>,
    pub mean_w2: f64,
    pub sinkhorn: Vec<SinkhornAt>,
    pub energy_true: Option<Vec<f64>>,
    pub energy_pred: Option<Vec<f64>>,
    pub energy_error: Option<RelError>,
    pub mean_error: RelError,
    pub config: MetricConfig,
}

/// Compares parameter `k_pred` of `pred` with parameter `k_true` of `truth`
/// on their common time grid.
pub fn evaluate(truth: &SnapshotDataset, k_true: usize, pred: &SnapshotDataset, k_pred: usize, cfg: &MetricConfig) -> Result<MetricReport> {
    if truth.dim() != pred.dim() {
        return Err(Error::Dataset(format!("dimension {} vs {}", truth.dim(), pred.dim())));
    }
    if k_true >= truth.n_mu() || k_pred >= pred.n_mu() {
        return Err(Error::Range("parameter index out of range".into()));
    }
    if truth.n_times() != pred.n_times()
        || truth.times().iter().zip(pred.times()).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs()))
    {
        return Err(Error::Dataset("time grids of truth and prediction differ".into()));
    }
    let d = truth.dim();
    let directions = projection_directions(d, cfg.projections, cfg.projection_seed);
    let mu = truth.mus()[k_true].clone();
    let mut w2 = Vec::with_capacity(truth.n_times());
    let mut means_true = Vec::new();
    let mut means_pred = Vec::new();
    let mut energy = cfg.vlasov.as_ref().map(|_| (Vec::new(), Vec::new()));
    for j in 0..truth.n_times() {
        let a = truth.snapshot_f64(k_true, j);
        let b = pred.snapshot_f64(k_pred, j);
        w2.push(if d == 1 { w2_squared_1d(&a, &b)?.sqrt() } else { sliced_w2(&a, &b, d, &directions)? });
        means_true.push(ensemble_mean(&a, d));
        means_pred.push(ensemble_mean(&b, d));
        if let (Some(dom), Some((et, ep))) = (&cfg.vlasov, energy.as_mut()) {
            let m = *mu.first().ok_or_else(|| Error::Dataset("plasma data needs a parameter".into()))?;
            et.push(electric_energy(&a, d, m, dom.length, dom.cells)?);
            ep.push(electric_energy(&b, d, m, dom.length, dom.cells)?);
        }
    }
    let mut sinkhorn_at = Vec::new();
    for &j in &cfg.sinkhorn_times {
        if j >= truth.n_times() {
            return Err(Error::Range(format!("sinkhorn time index {j}")));
        }
        let a = truth.snapshot_f64(k_true, j);
        let b = pred.snapshot_f64(k_pred, j);
        let cap = cfg.sinkhorn_max_points * d;
        let result = sinkhorn(&a[..a.len().min(cap)], &b[..b.len().min(cap)], d, cfg.sinkhorn_blur, cfg.sinkhorn_threshold)?;
        sinkhorn_at.push(SinkhornAt { time_index: j, result });
    }
    let energy_error = match &energy {
        Some((et, ep)) => Some(relative_trace_error(et, ep)?),
        None => None,
    };
    let (energy_true, energy_pred) = energy.map_or((None, None), |(a, b)| (Some(a), Some(b)));
    Ok(MetricReport {
        mu,
        times: truth.times().to_vec(),
        mean_w2: w2.iter().sum::<f64>() / w2.len() as f64,
        w2,
        sinkhorn: sinkhorn_at,
        energy_true,
        energy_pred,
        energy_error,
        mean_error: relative_mean_error(&means_true, &means_pred)?,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Provenance;

    #[test]
    fn relative_trace_error_examples() {
        assert_eq!(relative_trace_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
        assert_eq!(relative_trace_error(&[1.0, 3.0], &[2.0, 6.0]).unwrap().value, 1.0);
        let r = relative_trace_error(&[1.0, 2.0], &[1.1, 1.8]).unwrap();
        assert!((r.value - 0.1).abs() < 1e-15);
        let r = relative_trace_error(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!((r.value, r.excluded), (0.5, vec![0]));
        assert!(relative_trace_error(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn relative_mean_error_uses_vector_norms() {
        let r = relative_mean_error(&[vec![3.0, 4.0]], &[vec![3.0, 3.0]]).unwrap();
        assert!((r.value - 0.2).abs() < 1e-15);
    }

    #[test]
    fn energy_of_uniform_and_perturbed_positions() {
        let uniform: Vec<f64> = (0..4000).flat_map(|i| [(i as f64 + 0.5) * 50.0 / 4000.0, 1.0]).collect();
        assert!(electric_energy(&uniform, 2, 1.5, 50.0, 100).unwrap() < 1e-10);
        assert!(electric_energy(&uniform, 3, 1.5, 50.0, 100).is_err());
        let k = 2.0 * std::f64::consts::PI / 50.0;
        let energy = |a: f64| {
            // positions displaced by a small cosine modulation
            let xs: Vec<f64> = (0..4000).flat_map(|i| {
                let x = (i as f64 + 0.5) * 50.0 / 4000.0;
                [x - a * (k * x).sin() / k, 0.0]
            }).collect();
            electric_energy(&xs, 2, 1.5, 50.0, 100).unwrap()
        };
        assert!((energy(2e-4) / energy(1e-4) - 4.0).abs() < 1e-6);
        // particle order does not matter
        let mut xs: Vec<f64> = (0..300).flat_map(|i| [((i * 7919) % 1000) as f64 * 0.05, 0.0]).collect();
        let e0 = electric_energy(&xs, 2, 1.2, 50.0, 64).unwrap();
        let n = xs.len() / 2;
        for i in 0..n / 2 {
            xs.swap(2 * i, 2 * (n - 1 - i));
        }
        assert!((electric_energy(&xs, 2, 1.2, 50.0, 64).unwrap() - e0).abs() <= 1e-12 * e0);
    }

    fn dataset(shift: f32, times: Vec<f64>) -> SnapshotDataset {
        let n = 50;
        let nt = times.len();
        let data = (0..nt * n).flat_map(|i| [(i % n) as f32 * 0.1 + shift, 1.0 + (i % 7) as f32 * 0.01]).collect();
        SnapshotDataset::new(2, n, times, vec![vec![1.5]], true, Provenance::new("test", serde_json::Value::Null, 0), data).unwrap()
    }

    #[test]
    fn report_on_identical_and_shifted_ensembles() {
        let cfg = MetricConfig { sinkhorn_times: vec![1], vlasov: Some(VlasovDomain { length: 50.0, cells: 32 }), ..Default::default() };
        let a = dataset(0.0, vec![0.0, 1.0]);
        let r = evaluate(&a, 0, &a, 0, &cfg).unwrap();
        assert_eq!(r.mean_w2, 0.0);
        assert_eq!(r.energy_error.as_ref().unwrap().value, 0.0);
        assert!(r.sinkhorn[0].result.divergence.abs() < 1e-6);
        let b = dataset(0.5, vec![0.0, 1.0]);
        let r = evaluate(&a, 0, &b, 0, &cfg).unwrap();
        assert!(r.mean_w2 > 0.0 && r.mean_error.value > 0.0);
        assert!(evaluate(&a, 0, &dataset(0.0, vec![0.0, 2.0]), 0, &cfg).is_err());
    }
}
