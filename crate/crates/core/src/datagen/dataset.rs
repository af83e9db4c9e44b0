use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub config: serde_json::Value,
    pub seed: u64,
}

impl Provenance {
    pub fn new(generator: impl Into<String>, config: serde_json::Value, seed: u64) -> Self {
        Provenance { generator: generator.into(), config, seed }
    }
}

/// Samples `X[k][j][i] in R^d` over parameters `mu_k`, physical times `t_j`
/// and sample index `i`, stored as `f32` in `[mu][t][sample][dim]` order.
///
/// When `paired` is set, sample `i` is the same trajectory at every time.
/// Coordinates with a period (see [`SnapshotDataset::with_periods`]) live on
/// `[0, period)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotDataset {
    dim: usize,
    n_samples: usize,
    times: Vec<f64>,
    mus: Vec<Vec<f64>>,
    paired: bool,
    provenance: Provenance,
    data: Vec<f32>,
    periods: Vec<Option<f64>>,
}

impl SnapshotDataset {
    pub fn new(
        dim: usize,
        n_samples: usize,
        times: Vec<f64>,
        mus: Vec<Vec<f64>>,
        paired: bool,
        provenance: Provenance,
        data: Vec<f32>,
    ) -> Result<Self> {
        let ds = SnapshotDataset { dim, n_samples, times, mus, paired, provenance, data, periods: Vec::new() };
        ds.validate()?;
        Ok(ds)
    }

    /// Marks coordinates as periodic; `periods` has one entry per coordinate.
    /// An empty list makes every coordinate non-periodic.
    pub fn with_periods(mut self, periods: Vec<Option<f64>>) -> Result<Self> {
        if periods.iter().all(Option::is_none) {
            self.periods = Vec::new();
            return Ok(self);
        }
        if periods.len() != self.dim {
            return Err(Error::Dataset(format!("{} periods for dimension {}", periods.len(), self.dim)));
        }
        for (c, p) in periods.iter().enumerate() {
            let Some(p) = *p else { continue };
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Dataset(format!("period {p} of coordinate {c} must be positive")));
            }
            if let Some(i) = self.data.iter().skip(c).step_by(self.dim).position(|&v| !(v >= 0.0 && v <= p as f32)) {
                return Err(Error::Dataset(format!("coordinate {c} of sample row {i} lies outside [0, {p})")));
            }
        }
        self.periods = periods;
        Ok(self)
    }

    /// Schema checks: positive sizes, strictly increasing times, consistent
    /// parameter arity, payload length and finite values.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_samples == 0 {
            return Err(Error::Dataset(format!("empty dataset (d = {}, N_x = {})", self.dim, self.n_samples)));
        }
        if self.times.len() < 2 {
            return Err(Error::Dataset(format!("need at least two snapshot times, got {}", self.times.len())));
        }
        if let Some(j) = self.times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Dataset(format!(
                "times must be strictly increasing: t[{}] = {} then t[{}] = {}",
                j,
                self.times[j],
                j + 1,
                self.times[j + 1]
            )));
        }
        if self.times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Dataset("non-finite snapshot time".into()));
        }
        if self.mus.is_empty() {
            return Err(Error::Dataset("dataset has no parameter values".into()));
        }
        let p = self.mus[0].len();
        if self.mus.iter().any(|m| m.len() != p || m.iter().any(|v| !v.is_finite())) {
            return Err(Error::Dataset("parameter values must be finite and share one dimension".into()));
        }
        let expected = self.mus.len() * self.times.len() * self.n_samples * self.dim;
        if self.data.len() != expected {
            return Err(Error::Dataset(format!(
                "payload has {} values, expected N_mu*N_t*N_x*d = {expected}",
                self.data.len()
            )));
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            let per_t = self.n_samples * self.dim;
            let k = pos / (per_t * self.times.len());
            let j = (pos / per_t) % self.times.len();
            let i = (pos / self.dim) % self.n_samples;
            return Err(Error::Dataset(format!("non-finite sample at mu {k}, time {j}, sample {i}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }
    pub fn n_times(&self) -> usize {
        self.times.len()
    }
    pub fn n_mu(&self) -> usize {
        self.mus.len()
    }
    pub fn param_dim(&self) -> usize {
        self.mus[0].len()
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn mus(&self) -> &[Vec<f64>] {
        &self.mus
    }
    pub fn paired(&self) -> bool {
        self.paired
    }
    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    /// One entry per coordinate, or empty when nothing is periodic.
    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    /// Physical length of the time axis.
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// The `N_x x d` block at parameter `k`, time index `j`.
    pub fn snapshot(&self, k: usize, j: usize) -> &[f32] {
        let stride = self.n_samples * self.dim;
        let start = (k * self.times.len() + j) * stride;
        &self.data[start..start + stride]
    }

    pub fn snapshot_f64(&self, k: usize, j: usize) -> Vec<f64> {
        self.snapshot(k, j).iter().map(|&v| v as f64).collect()
    }

    pub fn sample(&self, k: usize, j: usize, i: usize) -> &[f32] {
        &self.snapshot(k, j)[i * self.dim..(i + 1) * self.dim]
    }

    /// Bracketing snapshot `j` and weight `w` with `t = (1-w) t_j + w t_{j+1}`.
    /// A time equal to a snapshot time yields `w = 0` at that snapshot.
    pub fn bracket(&self, t: f64) -> Result<(usize, f64)> {
        let (first, last) = (self.times[0], self.times[self.times.len() - 1]);
        if !(t >= first && t <= last) {
            return Err(Error::Range(format!("time {t} outside the data range [{first}, {last}]")));
        }
        let j = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        if self.times[j] == t || j + 1 == self.times.len() {
            return Ok((j, 0.0));
        }
        Ok((j, (t - self.times[j]) / (self.times[j + 1] - self.times[j])))
    }

    /// Linear interpolation of trajectory `i` at parameter `k` for a bracket
    /// returned by [`SnapshotDataset::bracket`]. Periodic coordinates move
    /// along the shorter way around and are wrapped back.
    pub fn interpolate_bracket(&self, k: usize, i: usize, j: usize, w: f64, out: &mut [f64]) {
        let a = self.sample(k, j, i);
        if w == 0.0 {
            for (o, &v) in out.iter_mut().zip(a) {
                *o = v as f64;
            }
            return;
        }
        let b = self.sample(k, j + 1, i);
        for (c, ((o, &x), &y)) in out.iter_mut().zip(a).zip(b).enumerate() {
            let (x, y) = (x as f64, y as f64);
            *o = match self.periods.get(c).copied().flatten() {
                Some(p) => {
                    let step = y - x - p * ((y - x) / p).round();
                    (x + w * step).rem_euclid(p)
                }
                None => (1.0 - w) * x + w * y,
            };
        }
    }

    /// Dataset restricted to the parameter indices in `keep`, in that order.
    pub fn select_mus(&self, keep: &[usize]) -> Result<Self> {
        let stride = self.times.len() * self.n_samples * self.dim;
        let mut data = Vec::with_capacity(keep.len() * stride);
        let mut mus = Vec::with_capacity(keep.len());
        for &k in keep {
            if k >= self.mus.len() {
                return Err(Error::Range(format!("parameter index {k} of {}", self.mus.len())));
            }
            data.extend_from_slice(&self.data[k * stride..(k + 1) * stride]);
            mus.push(self.mus[k].clone());
        }
        SnapshotDataset::new(self.dim, self.n_samples, self.times.clone(), mus, self.paired, self.provenance.clone(), data)?
            .with_periods(self.periods.clone())
    }

    /// Dataset restricted to the time indices in `keep` (ascending).
    pub fn select_times(&self, keep: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(self.mus.len() * keep.len() * self.n_samples * self.dim);
        for k in 0..self.mus.len() {
            for &j in keep {
                if j >= self.times.len() {
                    return Err(Error::Range(format!("time index {j} of {}", self.times.len())));
                }
                data.extend_from_slice(self.snapshot(k, j));
            }
        }
        let times = keep.iter().map(|&j| self.times[j]).collect();
        SnapshotDataset::new(self.dim, self.n_samples, times, self.mus.clone(), self.paired, self.provenance.clone(), data)?
            .with_periods(self.periods.clone())
    }
}
