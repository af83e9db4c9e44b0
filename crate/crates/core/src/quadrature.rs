//! Time-integration rules on an interval `[a, b]` and linear per-trajectory
//! resampling of snapshot data onto quadrature nodes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::SnapshotDataset;
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    MonteCarlo,
    Trapezoid,
    Simpson,
    GaussLegendre,
}

impl QuadratureKind {
    pub const ALL: [QuadratureKind; 4] =
        [QuadratureKind::MonteCarlo, QuadratureKind::Trapezoid, QuadratureKind::Simpson, QuadratureKind::GaussLegendre];

    pub fn name(self) -> &'static str {
        match self {
            QuadratureKind::MonteCarlo => "monte-carlo",
            QuadratureKind::Trapezoid => "trapezoid",
            QuadratureKind::Simpson => "simpson",
            QuadratureKind::GaussLegendre => "gauss-legendre",
        }
    }

    /// Whether nodes are fixed once the rule is built.
    pub fn is_deterministic(self) -> bool {
        self != QuadratureKind::MonteCarlo
    }
}

impl fmt::Display for QuadratureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuadratureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "monte-carlo" | "montecarlo" | "mc" => Ok(QuadratureKind::MonteCarlo),
            "trapezoid" | "trapezoidal" => Ok(QuadratureKind::Trapezoid),
            "simpson" => Ok(QuadratureKind::Simpson),
            "gauss-legendre" | "gauss" => Ok(QuadratureKind::GaussLegendre),
            other => Err(Error::Param(format!(
                "unknown quadrature `{other}` (expected monte-carlo, trapezoid, simpson or gauss-legendre)"
            ))),
        }
    }
}

/// Nodes and weights of one rule on `[a, b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub kind: QuadratureKind,
    pub a: f64,
    pub b: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Build a rule with `n` nodes. Monte Carlo draws its nodes from `seed`,
    /// which is then mandatory; the other kinds ignore it.
    pub fn new(kind: QuadratureKind, n: usize, a: f64, b: f64, seed: Option<u64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Param(format!("a quadrature rule needs at least 2 nodes, got {n}")));
        }
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::Param(format!("invalid interval [{a}, {b}]")));
        }
        let (nodes, weights) = match kind {
            QuadratureKind::MonteCarlo => {
                let seed = seed.ok_or_else(|| Error::Param("the monte-carlo rule needs a seed".into()))?;
                let mut rng = rng::stream(seed, rng::purpose::NODES, 0);
                let nodes = (0..n).map(|_| a + (b - a) * rng.random::<f64>()).collect();
                (nodes, vec![(b - a) / n as f64; n])
            }
            QuadratureKind::Trapezoid => {
                let h = (b - a) / (n - 1) as f64;
                let mut w = vec![h; n];
                w[0] = 0.5 * h;
                w[n - 1] = 0.5 * h;
                (equispaced(a, b, n), w)
            }
            QuadratureKind::Simpson => {
                if n % 2 == 0 {
                    return Err(Error::Param(format!(
                        "composite simpson needs an odd node count (even number of subintervals), got {n}"
                    )));
                }
                let h = (b - a) / (n - 1) as f64;
                let w = (0..n)
                    .map(|i| {
                        let c = if i == 0 || i == n - 1 {
                            1.0
                        } else if i % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        c * h / 3.0
                    })
                    .collect();
                (equispaced(a, b, n), w)
            }
            QuadratureKind::GaussLegendre => {
                let (t, w) = gauss_legendre(n);
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                (t.iter().map(|x| half * x + mid).collect(), w.iter().map(|x| half * x).collect())
            }
        };
        Ok(QuadratureRule { kind, a, b, nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_n w_n f(t_n)` for node-indexed values.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.nodes.len() {
            return Err(Error::Shape(format!("{} values for {} quadrature nodes", values.len(), self.nodes.len())));
        }
        Ok(self.weights.iter().zip(values).map(|(w, f)| w * f).sum())
    }

    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, w)| w * f(t)).sum()
    }
}

fn equispaced(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { b } else { a + i as f64 * h }).collect()
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre nodes (ascending) and weights on `[-1, 1]`: Newton on
/// `P_n` from Chebyshev-like initial guesses.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-14 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Snapshot data linearly interpolated per trajectory onto target times.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeBlocks {
    pub times: Vec<f64>,
    pub dim: usize,
    pub n_samples: usize,
    /// `[mu][node][sample][dim]`
    pub data: Vec<f64>,
}

impl NodeBlocks {
    pub fn block(&self, k: usize, n: usize) -> &[f64] {
        let stride = self.n_samples * self.dim;
        let start = (k * self.times.len() + n) * stride;
        &self.data[start..start + stride]
    }
}

/// Interpolate every trajectory of `data` onto `times` (physical units).
///
/// Unpaired datasets are only accepted when every target coincides with a
/// snapshot time, since interpolation needs trajectory identity.
pub fn resample_in_time(data: &SnapshotDataset, times: &[f64]) -> Result<NodeBlocks> {
    let n_mu = data.n_mu();
    let per = data.n_samples() * data.dim();
    let mut out = Vec::with_capacity(n_mu * times.len() * per);
    let brackets = times.iter().map(|&t| data.bracket(t)).collect::<Result<Vec<_>>>()?;
    if !data.paired() && brackets.iter().any(|&(_, w)| w != 0.0) {
        return Err(Error::Dataset(
            "dataset is not trajectory-paired: interpolation onto off-snapshot nodes (gauss-legendre, monte-carlo) is \
             undefined; use simpson or trapezoid nodes that coincide with snapshot times"
                .into(),
        ));
    }
    let mut buf = vec![0.0; data.dim()];
    for k in 0..n_mu {
        for &(j, w) in &brackets {
            for i in 0..data.n_samples() {
                data.interpolate_bracket(k, i, j, w, &mut buf);
                out.extend_from_slice(&buf);
            }
        }
    }
    Ok(NodeBlocks { times: times.to_vec(), dim: data.dim(), n_samples: data.n_samples(), data: out })
}
