//! Debiased entropic optimal transport between uniform point clouds with
//! cost `|x - y|^2`, by log-domain Sinkhorn iterations with epsilon scaling.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Iterations allowed at the target temperature.
pub const MAX_ITERATIONS: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    pub divergence: f64,
    pub blur: f64,
    /// Iterations of the slowest of the three transport problems.
    pub iterations: usize,
    /// Largest final L1 marginal violation of the three problems.
    pub violation: f64,
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
}

/// `0.05` times the median pairwise distance of the pooled clouds.
pub fn default_blur(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let pts: Vec<&[f64]> = a.chunks_exact(dim).chain(b.chunks_exact(dim)).collect();
    let mut d: Vec<f64> = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push(sq_dist(pts[i], pts[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    0.05 * *m
}

/// `-eps log sum_j exp((g_j - C_ij) / eps) / m` for every row `i`.
fn softmin(cost: &[f64], rows: usize, cols: usize, g: &[f64], eps: f64, out: &mut [f64]) {
    let log_m = (cols as f64).ln();
    for i in 0..rows {
        let row = &cost[i * cols..(i + 1) * cols];
        let mut max = f64::NEG_INFINITY;
        for (c, gj) in row.iter().zip(g) {
            max = max.max((gj - c) / eps);
        }
        let s: f64 = row.iter().zip(g).map(|(c, gj)| ((gj - c) / eps - max).exp()).sum();
        out[i] = -eps * (max + s.ln() - log_m);
    }
}

fn transpose(cost: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; cost.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = cost[i * cols + j];
        }
    }
    t
}

/// L1 distance between the row marginal of the plan and the uniform weights.
fn row_violation(cost: &[f64], rows: usize, cols: usize, f: &[f64], g: &[f64], eps: f64) -> f64 {
    let (wa, wb) = (1.0 / rows as f64, 1.0 / cols as f64);
    (0..rows)
        .map(|i| {
            let row = &cost[i * cols..(i + 1) * cols];
            let mass: f64 = row.iter().zip(g).map(|(c, gj)| wa * wb * ((f[i] + gj - c) / eps).exp()).sum();
            (mass - wa).abs()
        })
        .sum()
}

struct Potentials {
    f: Vec<f64>,
    g: Vec<f64>,
    iterations: usize,
    violation: f64,
}

/// Entropic transport potentials with a geometric temperature schedule
/// from the cloud diameter down to `eps`.
fn solve(cost: &[f64], rows: usize, cols: usize, eps: f64, threshold: f64, symmetric: bool) -> Result<Potentials> {
    let cost_t = transpose(cost, rows, cols);
    let diameter = cost.iter().copied().fold(0.0, f64::max).max(eps);
    let mut f = vec![0.0; rows];
    let mut g = vec![0.0; cols];
    let mut nf = vec![0.0; rows];
    let mut ng = vec![0.0; cols];
    let mut temp = diameter;
    loop {
        let at_target = temp <= eps;
        let budget = if at_target { MAX_ITERATIONS } else { 5 };
        for it in 0..budget {
            // averaged simultaneous updates; a self-transport problem keeps g = f
            softmin(cost, rows, cols, &g, temp, &mut nf);
            if !symmetric {
                softmin(&cost_t, cols, rows, &f, temp, &mut ng);
            }
            for (a, b) in f.iter_mut().zip(&nf) {
                *a = 0.5 * (*a + b);
            }
            if symmetric {
                g.copy_from_slice(&f);
            } else {
                for (a, b) in g.iter_mut().zip(&ng) {
                    *a = 0.5 * (*a + b);
                }
            }
            if at_target {
                let violation = row_violation(cost, rows, cols, &f, &g, temp);
                if !violation.is_finite() {
                    return Err(Error::non_finite("sinkhorn potentials"));
                }
                if violation < threshold {
                    return Ok(Potentials { f, g, iterations: it + 1, violation });
                }
                if it + 1 == budget {
                    return Err(Error::SinkhornNotConverged { iterations: budget, violation });
                }
            }
        }
        temp = (temp * 0.5).max(eps);
    }
}

/// Debiased Sinkhorn divergence `OT(a,b) - OT(a,a)/2 - OT(b,b)/2` with
/// temperature `blur^2`. `blur = None` uses [`default_blur`].
pub fn sinkhorn(a: &[f64], b: &[f64], dim: usize, blur: Option<f64>, threshold: f64) -> Result<SinkhornResult> {
    if dim == 0 || a.is_empty() || b.is_empty() || a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(Error::Shape(format!("point clouds must be nonempty multiples of dimension {dim}")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::non_finite("sinkhorn input"));
    }
    let blur = blur.unwrap_or_else(|| default_blur(a, b, dim));
    if !(blur > 0.0) {
        // all points coincide
        return Ok(SinkhornResult { divergence: 0.0, blur, iterations: 0, violation: 0.0 });
    }
    let eps = blur * blur;
    let (n, m) = (a.len() / dim, b.len() / dim);
    let cost = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.chunks_exact(dim).flat_map(|p| y.chunks_exact(dim).map(move |q| sq_dist(p, q))).collect()
    };
    let ab = solve(&cost(a, b), n, m, eps, threshold, false)?;
    let aa = solve(&cost(a, a), n, n, eps, threshold, true)?;
    let bb = solve(&cost(b, b), m, m, eps, threshold, true)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let divergence = mean(&ab.f) - mean(&aa.f) + mean(&ab.g) - mean(&bb.f);
    Ok(SinkhornResult {
        divergence,
        blur,
        iterations: ab.iterations.max(aa.iterations).max(bb.iterations),
        violation: ab.violation.max(aa.violation).max(bb.violation),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cloud(n: usize, d: usize, shift: f64, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| shift + rng.random::<f64>()).collect()
    }

    /// Exact OT between equal-size uniform clouds over all assignments.
    fn brute_force(a: &[f64], b: &[f64], d: usize) -> f64 {
        let n = a.len() / d;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        fn heap(k: usize, perm: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
            if k == 1 {
                visit(perm);
                return;
            }
            for i in 0..k {
                heap(k - 1, perm, visit);
                let j = if k % 2 == 0 { i } else { 0 };
                perm.swap(j, k - 1);
            }
        }
        heap(n, &mut perm, &mut |p: &[usize]| {
            let c: f64 = p.iter().enumerate().map(|(i, &j)| sq_dist(&a[i * d..(i + 1) * d], &b[j * d..(j + 1) * d])).sum();
            best = best.min(c / n as f64);
        });
        best
    }

    #[test]
    fn self_divergence_vanishes() {
        let a = cloud(30, 2, 0.0, 1);
        let r = sinkhorn(&a, &a, 2, None, 1e-3).unwrap();
        assert!(r.divergence.abs() <= 1e-6, "{}", r.divergence);
    }

    #[test]
    fn small_sets_match_exact_transport() {
        for (n, seed) in [(5, 2), (7, 3), (8, 4)] {
            let a = cloud(n, 2, 0.0, seed);
            let b = cloud(n, 2, 0.6, seed + 10);
            let exact = brute_force(&a, &b, 2);
            let r = sinkhorn(&a, &b, 2, Some(0.01), 1e-3).unwrap();
            assert!(((r.divergence - exact) / exact).abs() < 0.05, "n={n}: {} vs {exact}", r.divergence);
            assert!(r.violation < 1e-3);
        }
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = cloud(20, 3, 0.0, 5);
        let b = cloud(25, 3, 0.4, 6);
        let x = sinkhorn(&a, &b, 3, Some(0.2), 1e-6).unwrap().divergence;
        let y = sinkhorn(&b, &a, 3, Some(0.2), 1e-6).unwrap().divergence;
        assert!((x - y).abs() < 1e-10, "{x} vs {y}");
    }

    #[test]
    fn gap_to_exact_shrinks_with_blur() {
        let a = cloud(6, 2, 0.0, 7);
        let b = cloud(6, 2, 0.3, 8);
        let exact = brute_force(&a, &b, 2);
        let mut last = f64::INFINITY;
        for blur in [0.8, 0.4, 0.2, 0.1, 0.05, 0.02] {
            let gap = (sinkhorn(&a, &b, 2, Some(blur), 1e-4).unwrap().divergence - exact).abs();
            assert!(gap < last, "blur {blur}: gap {gap} after {last}");
            last = gap;
        }
    }

    #[test]
    fn iteration_cap_is_reported() {
        let a = cloud(8, 1, 0.0, 9);
        let b = cloud(8, 1, 5.0, 10);
        // a threshold below round-off can never be met
        match sinkhorn(&a, &b, 1, Some(0.5), 0.0) {
            Err(Error::SinkhornNotConverged { iterations, violation }) => {
                assert_eq!(iterations, MAX_ITERATIONS);
                assert!(violation >= 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonfinite_input_is_rejected() {
        assert!(sinkhorn(&[f64::NAN], &[0.0], 1, None, 1e-3).is_err());
    }
}
