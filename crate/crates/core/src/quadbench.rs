//! Accuracy of time-integral estimates: every quadrature rule against a
//! reference value, over node counts and Monte Carlo seeds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::quadrature::{QuadratureKind, QuadratureRule};
use crate::rng;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub rule: QuadratureKind,
    pub nodes: usize,
    /// Relative errors `|estimate - reference| / |reference|`, one per seed
    /// for Monte Carlo and a single entry otherwise.
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl StudyRow {
    fn new(rule: QuadratureKind, nodes: usize, errors: Vec<f64>) -> Self {
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let std = if errors.len() > 1 {
            (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[m] } else { 0.5 * (sorted[m - 1] + sorted[m]) };
        StudyRow { rule, nodes, errors, mean, std, median }
    }
}

/// Estimates `int_0^1 q` with every rule at each node count. `q` maps a
/// batch of nodes to values. Simpson skips even counts; Monte Carlo uses
/// `mc_seeds` node draws derived from `seed`.
pub fn estimator_study(
    mut q: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    reference: f64,
    node_counts: &[usize],
    mc_seeds: usize,
    seed: u64,
) -> Result<Vec<StudyRow>> {
    let rel = |v: f64| (v - reference).abs() / reference.abs().max(f64::MIN_POSITIVE);
    let mut rows = Vec::new();
    for &n in node_counts {
        for kind in QuadratureKind::ALL {
            if kind == QuadratureKind::Simpson && n % 2 == 0 {
                continue;
            }
            let errors = if kind.is_deterministic() {
                let rule = QuadratureRule::new(kind, n, 0.0, 1.0, None)?;
                vec![rel(rule.integrate(&q(&rule.nodes)?)?)]
            } else {
                let mut errs = Vec::with_capacity(mc_seeds);
                for s in 0..mc_seeds {
                    let node_seed = rng::stream(seed, rng::purpose::QUADBENCH, s as u64).random();
                    let rule = QuadratureRule::new(kind, n, 0.0, 1.0, Some(node_seed))?;
                    errs.push(rel(rule.integrate(&q(&rule.nodes)?)?));
                }
                errs
            };
            rows.push(StudyRow::new(kind, n, errors));
        }
    }
    Ok(rows)
}
