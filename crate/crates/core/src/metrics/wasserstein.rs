use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng;
use crate::{Error, Result};

/// Squared 2-Wasserstein distance between two empirical 1D measures with
/// uniform weights, by the monotone (quantile) coupling.
pub fn w2_squared_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Shape("empty ensemble".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64);
    }
    // walk the merged breakpoints of both quantile functions
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / na;
        let next_b = (j + 1) as f64 / nb;
        let next = next_a.min(next_b);
        acc += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(acc)
}

/// Unit directions drawn uniformly on the sphere.
pub fn projection_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, rng::purpose::PROJECTIONS, dim as u64);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// Mean over `directions` of the 1D W2 distance between projections.
pub fn sliced_w2(a: &[f64], b: &[f64], dim: usize, directions: &[Vec<f64>]) -> Result<f64> {
    check(a, b, dim)?;
    if directions.is_empty() {
        return Err(Error::Param("no projection directions".into()));
    }
    let project = |xs: &[f64], dir: &[f64]| -> Vec<f64> {
        xs.chunks_exact(dim).map(|x| x.iter().zip(dir).map(|(p, q)| p * q).sum()).collect()
    };
    let mut total = 0.0;
    for dir in directions {
        total += w2_squared_1d(&project(a, dir), &project(b, dir))?.sqrt();
    }
    Ok(total / directions.len() as f64)
}

fn check(a: &[f64], b: &[f64], dim: usize) -> Result<()> {
    if dim == 0 || a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(Error::Shape(format!("ensembles are not multiples of dimension {dim}")));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Shape("empty ensemble".into()));
    }
    Ok(())
}

/// W2 between ensembles (`n x dim`, row-major): exact in 1D, sliced with
/// `projections` random directions otherwise.
pub fn wasserstein(a: &[f64], b: &[f64], dim: usize, projections: usize, seed: u64) -> Result<f64> {
    check(a, b, dim)?;
    if dim == 1 {
        return Ok(w2_squared_1d(a, b)?.sqrt());
    }
    sliced_w2(a, b, dim, &projection_directions(dim, projections, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn normal(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn identical_ensembles_are_at_zero() {
        let a = normal(500, 0.0, 1.0, 1);
        assert_eq!(wasserstein(&a, &a, 1, 64, 0).unwrap(), 0.0);
        assert_eq!(wasserstein(&a, &a, 2, 64, 0).unwrap(), 0.0);
    }

    #[test]
    fn gaussians_match_closed_form() {
        // W2(N(0,1), N(1,1)) = sqrt(1^2 + 0^2)
        let w = wasserstein(&normal(10_000, 0.0, 1.0, 2), &normal(10_000, 1.0, 1.0, 3), 1, 64, 0).unwrap();
        assert!((w - 1.0).abs() < 0.05, "{w}");
        let w = wasserstein(&normal(10_000, 0.0, 1.0, 4), &normal(7_000, 0.5, 2.0, 5), 1, 64, 0).unwrap();
        assert!((w - (0.25f64 + 1.0).sqrt()).abs() < 0.05, "{w}");
    }

    #[test]
    fn unequal_sizes_follow_quantiles() {
        // a = {0, 1}, b = {0, 0.5, 1}: quantile gaps 0 on [0,1/3], 0.5 on [1/3,1/2], 0.5 on [1/2,2/3], 0 after
        let w2 = w2_squared_1d(&[0.0, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert!((w2 - 0.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_ensemble_is_an_error() {
        assert!(wasserstein(&[], &[1.0], 1, 8, 0).is_err());
        assert!(wasserstein(&[1.0, 2.0, 3.0], &[1.0, 2.0], 2, 8, 0).is_err());
    }

    #[test]
    fn rotation_with_matched_projections_is_invariant() {
        let a = normal(600, 0.0, 1.0, 6);
        let b = normal(600, 0.3, 1.5, 7);
        let dirs = projection_directions(2, 64, 9);
        let (c, s) = (0.6f64, 0.8f64);
        let rot = |xs: &[f64]| xs.chunks(2).flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect::<Vec<_>>();
        let rdirs: Vec<Vec<f64>> = dirs.iter().map(|d| rot(d)).collect();
        let w = sliced_w2(&a, &b, 2, &dirs).unwrap();
        let wr = sliced_w2(&rot(&a), &rot(&b), 2, &rdirs).unwrap();
        assert!((w - wr).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn translation_of_both_changes_nothing(shift in prop::collection::vec(-10.0f64..10.0, 3), seed in 0u64..100) {
            let a = normal(90, 0.0, 1.0, seed);
            let b = normal(60, 1.0, 0.5, seed + 1);
            let mv = |xs: &[f64]| xs.chunks(3).flat_map(|p| p.iter().zip(&shift).map(|(x, s)| x + s).collect::<Vec<_>>()).collect::<Vec<_>>();
            let w = wasserstein(&a, &b, 3, 64, 5).unwrap();
            let ws = wasserstein(&mv(&a), &mv(&b), 3, 64, 5).unwrap();
            prop_assert!((w - ws).abs() < 1e-12);
        }

        #[test]
        fn nonnegative_and_symmetric(seed in 0u64..1000) {
            let a = normal(40, 0.0, 1.0, seed);
            let b = normal(40, 0.2, 1.0, seed + 7);
            let w = wasserstein(&a, &b, 2, 16, 1).unwrap();
            prop_assert!(w >= 0.0);
            prop_assert!((w - wasserstein(&b, &a, 2, 16, 1).unwrap()).abs() < 1e-12);
        }
    }
}
