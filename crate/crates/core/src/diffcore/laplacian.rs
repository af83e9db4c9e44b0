use rand::Rng;

use super::dual::{Dual, MAX_TANGENTS};
use super::real::Real;
use super::tape::Tape;
use crate::rng;
use crate::{Error, Result};

/// A scalar function generic over the scalar algebra.
pub trait ScalarFn {
    fn eval<R: Real>(&self, x: &[R]) -> R;
}

/// Value and gradient of `f` at `x` from a single reverse sweep.
pub fn grad_reverse<F: ScalarFn + ?Sized>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let vars: Vec<_> = x.iter().map(|&v| tape.leaf(v)).collect();
    let out = f.eval(&vars);
    let grad = tape.gradient(&out)?;
    Ok((*out.value(), grad))
}

/// Exact Laplacian `sum_j d^2 f / dx_j^2` by forward-over-reverse, pushing
/// at most [`MAX_TANGENTS`] coordinate directions through each pass.
///
/// Inputs with more than `cap` coordinates are refused; use
/// [`hutchinson_laplacian`] for those.
pub fn hess_diag_sum<F: ScalarFn + ?Sized>(f: &F, x: &[f64], cap: usize) -> Result<f64> {
    let d = x.len();
    if d > cap {
        return Err(Error::LaplacianCap { dim: d, cap });
    }
    let mut total = 0.0;
    for start in (0..d).step_by(MAX_TANGENTS) {
        let width = MAX_TANGENTS.min(d - start);
        let tape = Tape::new();
        let vars: Vec<_> = x
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if (start..start + width).contains(&j) {
                    tape.leaf(Dual::variable(v, j - start, width))
                } else {
                    tape.leaf(Dual::constant(v))
                }
            })
            .collect();
        let out = f.eval(&vars);
        let grad = tape.gradient(&out)?;
        total += (0..width).map(|k| grad[start + k].tangent(k)).sum::<f64>();
    }
    Ok(total)
}

/// Unbiased Laplacian estimate `mean_k v_k^T H v_k` over Rademacher probes.
pub fn hutchinson_laplacian<F: ScalarFn + ?Sized>(f: &F, x: &[f64], probes: usize, seed: u64) -> Result<f64> {
    if probes == 0 {
        return Err(Error::Param("hutchinson estimator needs at least one probe".into()));
    }
    let d = x.len();
    let mut rng = rng::stream(seed, rng::purpose::PROBES, 0);
    let dirs: Vec<Vec<f64>> =
        (0..probes).map(|_| (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()).collect();
    let mut total = 0.0;
    for chunk in dirs.chunks(MAX_TANGENTS) {
        let tape = Tape::new();
        let vars: Vec<_> = (0..d)
            .map(|j| {
                let t: Vec<f64> = chunk.iter().map(|v| v[j]).collect();
                tape.leaf(Dual::new(x[j], &t))
            })
            .collect();
        let out = f.eval(&vars);
        let grad = tape.gradient(&out)?;
        for (k, v) in chunk.iter().enumerate() {
            total += (0..d).map(|j| v[j] * grad[j].tangent(k)).sum::<f64>();
        }
    }
    Ok(total / probes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct HalfNormSq;
    impl ScalarFn for HalfNormSq {
        fn eval<R: Real>(&self, x: &[R]) -> R {
            let mut acc = x[0].lift(0.0);
            for v in x {
                acc = acc + v.square();
            }
            acc.scale(0.5)
        }
    }

    struct Cube;
    impl ScalarFn for Cube {
        fn eval<R: Real>(&self, x: &[R]) -> R {
            x[0].powi(3)
        }
    }

    /// Dense swish network with all weights as inputs (weights first, then x).
    struct SwishNet {
        dims: Vec<usize>,
    }

    impl SwishNet {
        fn n_params(&self) -> usize {
            self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
        }
        fn random_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
            let mut p = Vec::new();
            for w in self.dims.windows(2) {
                let bound = 1.0 / (w[0] as f64).sqrt();
                for _ in 0..w[0] * w[1] + w[1] {
                    p.push(rng.random_range(-bound..bound));
                }
            }
            p
        }
    }

    impl ScalarFn for SwishNet {
        fn eval<R: Real>(&self, all: &[R]) -> R {
            let np = self.n_params();
            let (p, x) = all.split_at(np);
            let mut h: Vec<R> = x.to_vec();
            let mut off = 0;
            let last = self.dims.len() - 2;
            for (l, w) in self.dims.windows(2).enumerate() {
                let (n_in, n_out) = (w[0], w[1]);
                let mut z = Vec::with_capacity(n_out);
                for r in 0..n_out {
                    let mut acc = p[off + n_in * n_out + r].clone();
                    for c in 0..n_in {
                        acc = acc + p[off + r * n_in + c].clone() * h[c].clone();
                    }
                    z.push(if l == last { acc } else { acc.swish() });
                }
                off += n_in * n_out + n_out;
                h = z;
            }
            h.pop().unwrap()
        }
    }

    /// Closure-style wrapper for plain-f64 evaluation in finite differences.
    fn eval_f64<F: ScalarFn>(f: &F, x: &[f64]) -> f64 {
        f.eval(x)
    }

    #[test]
    fn laplacian_of_half_norm_is_dimension() {
        assert_eq!(hess_diag_sum(&HalfNormSq, &[0.3, -1.0, 2.0, 5.0], 32).unwrap(), 4.0);
        // more than one pass of tangents
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        assert_eq!(hess_diag_sum(&HalfNormSq, &x, 32).unwrap(), 20.0);
    }

    #[test]
    fn laplacian_of_cube() {
        assert_eq!(hess_diag_sum(&Cube, &[2.0], 32).unwrap(), 12.0);
    }

    #[test]
    fn cap_is_enforced() {
        let x = vec![0.0; 40];
        assert!(matches!(hess_diag_sum(&HalfNormSq, &x, 32), Err(Error::LaplacianCap { dim: 40, cap: 32 })));
        // the stochastic estimator is exact for the identity Hessian
        assert!((hutchinson_laplacian(&HalfNormSq, &x, 16, 1).unwrap() - 40.0).abs() < 1e-12);
    }

    #[test]
    fn grad_reverse_matches_finite_differences_on_deep_swish_net() {
        let net = SwishNet { dims: vec![3, 64, 64, 64, 64, 64, 64, 1] };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut point = net.random_params(&mut rng);
        point.extend([0.4, -0.9, 1.3]);
        let (_, grad) = grad_reverse(&net, &point).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        // a spread of weights from every layer plus all inputs
        let picks: Vec<usize> = (0..point.len()).step_by(97).chain(point.len() - 3..point.len()).collect();
        for &i in &picks {
            let mut p = point.clone();
            p[i] += h;
            let fp = eval_f64(&net, &p);
            p[i] -= 2.0 * h;
            let fm = eval_f64(&net, &p);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn laplacian_matches_second_differences_on_small_net() {
        let net = SwishNet { dims: vec![2, 16, 16, 1] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = net.random_params(&mut rng);
        struct Bound<'a>(&'a SwishNet, &'a [f64]);
        impl ScalarFn for Bound<'_> {
            fn eval<R: Real>(&self, x: &[R]) -> R {
                let mut all: Vec<R> = self.1.iter().map(|&p| x[0].lift(p)).collect();
                all.extend_from_slice(x);
                self.0.eval(&all)
            }
        }
        let f = Bound(&net, &params);
        for x in [[0.2, -0.4], [1.5, 0.7], [-2.0, 0.1]] {
            let lap = hess_diag_sum(&f, &x, 32).unwrap();
            let h = 1e-4;
            let f0 = f.eval(&x[..]);
            let mut fd = 0.0;
            for j in 0..2 {
                let mut p = x;
                p[j] += h;
                let fp = f.eval(&p[..]);
                p[j] -= 2.0 * h;
                let fm = f.eval(&p[..]);
                fd += (fp - 2.0 * f0 + fm) / (h * h);
            }
            assert!((lap - fd).abs() / fd.abs().max(1e-3) < 1e-3, "lap {lap} vs fd {fd}");
        }
    }

    #[test]
    fn hutchinson_is_unbiased_on_a_network() {
        let net = SwishNet { dims: vec![3, 8, 1] };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = net.random_params(&mut rng);
        struct Bound<'a>(&'a SwishNet, &'a [f64]);
        impl ScalarFn for Bound<'_> {
            fn eval<R: Real>(&self, x: &[R]) -> R {
                let mut all: Vec<R> = self.1.iter().map(|&p| x[0].lift(p)).collect();
                all.extend_from_slice(x);
                self.0.eval(&all)
            }
        }
        let f = Bound(&net, &params);
        let x = [0.3, -0.2, 0.8];
        let exact = hess_diag_sum(&f, &x, 32).unwrap();
        let est = hutchinson_laplacian(&f, &x, 4000, 9).unwrap();
        assert!((exact - est).abs() < 0.05 * exact.abs().max(0.1), "{exact} vs {est}");
    }

    fn rotation(theta: f64, phi: f64) -> [[f64; 3]; 3] {
        let (c, s) = (theta.cos(), theta.sin());
        let (c2, s2) = (phi.cos(), phi.sin());
        let rz = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let rx = [[1.0, 0.0, 0.0], [0.0, c2, -s2], [0.0, s2, c2]];
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| rz[i][k] * rx[k][j]).sum();
            }
        }
        r
    }

    struct Prim(usize);
    impl ScalarFn for Prim {
        fn eval<R: Real>(&self, x: &[R]) -> R {
            let (a, b) = (x[0].clone(), x[1].clone());
            match self.0 {
                0 => a + b,
                1 => a - b,
                2 => a * b,
                3 => a / b,
                4 => -a,
                5 => a.exp(),
                6 => a.ln(),
                7 => a.sin(),
                8 => a.cos(),
                9 => a.sigmoid(),
                10 => a.swish(),
                11 => a.powi(3),
                _ => a.swish_d1(),
            }
        }
    }

    proptest! {
        #[test]
        fn forward_and_reverse_agree_on_primitives(a in 0.1f64..3.0, b in 0.1f64..3.0, sa in any::<bool>()) {
            let a = if sa { a } else { -a };
            for op in 0..13 {
                let x = if op == 6 { [a.abs(), b] } else { [a, b] };
                let (_, rev) = grad_reverse(&Prim(op), &x).unwrap();
                let fwd = Prim(op).eval(&[Dual::variable(x[0], 0, 2), Dual::variable(x[1], 1, 2)]);
                for k in 0..2 {
                    let (r, f) = (rev[k], fwd.tangent(k));
                    prop_assert!((r - f).abs() <= 1e-12 * r.abs().max(f.abs()).max(1e-300), "op {} slot {}: {} vs {}", op, k, r, f);
                }
            }
        }

        #[test]
        fn gradient_is_linear(x in proptest::collection::vec(-2.0f64..2.0, 3), c in -3.0f64..3.0) {
            struct G;
            impl ScalarFn for G {
                fn eval<R: Real>(&self, x: &[R]) -> R {
                    (x[0].clone() * x[1].clone()).sin() + x[2].swish()
                }
            }
            struct H;
            impl ScalarFn for H {
                fn eval<R: Real>(&self, x: &[R]) -> R {
                    x[0].exp().scale(0.1) * x[2].clone() + x[1].sigmoid()
                }
            }
            struct Sum(f64);
            impl ScalarFn for Sum {
                fn eval<R: Real>(&self, x: &[R]) -> R {
                    G.eval(x) + H.eval(x).scale(self.0)
                }
            }
            let (_, gs) = grad_reverse(&Sum(c), &x).unwrap();
            let (_, g) = grad_reverse(&G, &x).unwrap();
            let (_, h) = grad_reverse(&H, &x).unwrap();
            for k in 0..3 {
                prop_assert!((gs[k] - (g[k] + c * h[k])).abs() < 1e-12);
            }
        }

        #[test]
        fn laplacian_is_rotation_invariant(x in proptest::collection::vec(-3.0f64..3.0, 3), th in 0.0f64..6.3, ph in 0.0f64..6.3) {
            let r = rotation(th, ph);
            let y: Vec<f64> = (0..3).map(|i| (0..3).map(|j| r[i][j] * x[j]).sum()).collect();
            let a = hess_diag_sum(&HalfNormSq, &x, 32).unwrap();
            let b = hess_diag_sum(&HalfNormSq, &y, 32).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
