use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(dim: usize, param_dim: usize) -> ModelConfig {
    ModelConfig { dim, param_dim, depth_main: 4, width_main: 8, depth_hyper: 2, width_hyper: 5, ..ModelConfig::default() }
}

fn norm(dim: usize, p: usize) -> Normalization {
    Normalization {
        x_shift: (0..dim).map(|j| 0.1 * j as f64).collect(),
        x_scale: (0..dim).map(|j| 1.0 + 0.5 * j as f64).collect(),
        mu_shift: vec![1.0; p],
        mu_scale: vec![0.5; p],
        t0: 0.0,
        horizon: 1.0,
    }
}

/// A model whose modulation path is active: every parameter jittered.
fn active(cfg: ModelConfig, seed: u64) -> FieldModel {
    let (d, p) = (cfg.dim, cfg.param_dim);
    let mut m = FieldModel::init(cfg, norm(d, p), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for v in m.params_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    m
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

#[test]
fn init_is_deterministic_and_shaped() {
    let cfg = ModelConfig { dim: 2, param_dim: 1, ..ModelConfig::default() };
    let a = FieldModel::init(cfg.clone(), Normalization::identity(2, 1), 4).unwrap();
    let b = FieldModel::init(cfg.clone(), Normalization::identity(2, 1), 4).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(a.n_layers(), 7);
    let hidden = a.layer(3);
    assert_eq!((hidden.a.rows(), hidden.a.cols()), (64, 3));
    assert_eq!((hidden.b.rows(), hidden.b.cols()), (3, 64));
    assert!(hidden.a.as_slice().iter().all(|&v| v == 0.0));
    let (phi, _) = a.modulations(0.3, &[0.5]).unwrap();
    assert_eq!(phi.len(), 7);
    let c = FieldModel::init(cfg, Normalization::identity(2, 1), 5).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn fresh_model_ignores_time_and_parameter() {
    let m = FieldModel::init(small_config(3, 2), norm(3, 2), 1).unwrap();
    let x = [0.2, -0.7, 1.1];
    let j0 = m.eval_jet(&x, 0.0, &[1.0, 2.0], true).unwrap();
    let j1 = m.eval_jet(&x, 0.8, &[1.7, -3.0], true).unwrap();
    assert_eq!(j0.s, j1.s);
    assert_eq!(j0.grad_x, j1.grad_x);
    assert_eq!(j0.dt, 0.0);
    assert_eq!(j1.dt, 0.0);
}

#[test]
fn layer_forward_examples() {
    let layer = ColoraLayer {
        w: Matrix::identity(2),
        a: Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
        b: Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap(),
        bias: vec![0.0, 0.0],
    };
    assert_eq!(layer.forward(&[1.0, 1.0], 2.0).unwrap(), vec![3.0, 1.0]);
    assert_eq!(layer.forward(&[1.0, 1.0], 0.0).unwrap(), vec![1.0, 1.0]);
    assert!(layer.forward(&[1.0], 1.0).is_err());

    let m = active(small_config(3, 1), 2);
    let l = m.layer(1);
    let x: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
    let out = |phi| l.forward(&x, phi).unwrap();
    let (p1, p2) = (0.7, -1.3);
    for r in 0..8 {
        let lhs = out(p1 + p2)[r] - out(p1)[r];
        let rhs = out(p2)[r] - out(0.0)[r];
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

#[test]
fn fast_jets_match_taped_route() {
    for shared in [false, true] {
        let cfg = ModelConfig { shared_modulation: shared, ..small_config(3, 2) };
        let m = active(cfg, 3);
        for (x, tau) in [([0.3, -0.2, 0.9], 0.1), ([-1.4, 0.5, 0.0], 0.75)] {
            let mu = [1.3, 0.6];
            let fast = m.eval_jet(&x, tau, &mu, true).unwrap();
            let taped = m.eval_jet_taped(&x, tau, &mu, true).unwrap();
            assert!(rel(fast.s, taped.s, 1e-3) < 1e-12);
            assert!(rel(fast.dt, taped.dt, 1e-3) < 1e-10, "{} vs {}", fast.dt, taped.dt);
            assert!(rel(fast.laplacian, taped.laplacian, 1e-3) < 1e-10);
            for j in 0..3 {
                assert!(rel(fast.grad_x[j], taped.grad_x[j], 1e-3) < 1e-10);
            }
        }
    }
}

#[test]
fn jets_match_finite_differences() {
    let m = active(small_config(2, 1), 8);
    let mu = [1.2];
    let f = |x: &[f64], tau: f64| m.eval_real(x, &tau, &mu);
    let x = [0.4, -0.3];
    let tau = 0.35;
    let jet = m.eval_jet(&x, tau, &mu, true).unwrap();
    let h = 1e-5;
    let dt = (f(&x, tau + h) - f(&x, tau - h)) / (2.0 * h);
    assert!(rel(jet.dt, dt, 1e-3) < 1e-6);
    let mut lap = 0.0;
    for j in 0..2 {
        let (mut p, mut q) = (x, x);
        p[j] += h;
        q[j] -= h;
        let g = (f(&p, tau) - f(&q, tau)) / (2.0 * h);
        assert!(rel(jet.grad_x[j], g, 1e-3) < 1e-6);
        let h2 = 1e-4;
        let (mut p, mut q) = (x, x);
        p[j] += h2;
        q[j] -= h2;
        lap += (f(&p, tau) - 2.0 * f(&x, tau) + f(&q, tau)) / (h2 * h2);
    }
    assert!(rel(jet.laplacian, lap, 1e-3) < 1e-4);
}

#[test]
fn output_bias_is_a_gauge() {
    let mut m = active(small_config(2, 1), 9);
    let x = [0.1, 0.2];
    let before = m.eval_jet(&x, 0.5, &[1.0], true).unwrap();
    m.add_output_bias(2.5);
    let after = m.eval_jet(&x, 0.5, &[1.0], true).unwrap();
    assert!((after.s - before.s - 2.5).abs() < 1e-12);
    assert_eq!(after.grad_x, before.grad_x);
    assert_eq!(after.dt, before.dt);
    assert_eq!(after.laplacian, before.laplacian);
}

#[test]
fn laplacian_flag_leaves_other_slots_bitwise() {
    let m = active(small_config(3, 1), 10);
    let xs: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
    let on = m.batch_jets(&xs, 0.4, &[1.1], true).unwrap();
    let off = m.batch_jets(&xs, 0.4, &[1.1], false).unwrap();
    for (a, b) in on.iter().zip(&off) {
        assert_eq!(a.s.to_bits(), b.s.to_bits());
        assert_eq!(a.dt.to_bits(), b.dt.to_bits());
        assert_eq!(a.grad_x, b.grad_x);
        assert_eq!(b.laplacian, 0.0);
    }
}

#[test]
fn batch_equals_pointwise() {
    let m = active(small_config(2, 1), 11);
    let xs = [0.1, 0.2, -0.5, 0.9, 1.5, -1.0];
    let batch = m.batch_jets(&xs, 0.6, &[0.9], true).unwrap();
    for (i, jet) in batch.iter().enumerate() {
        let single = m.eval_jet(&xs[2 * i..2 * i + 2], 0.6, &[0.9], true).unwrap();
        assert!((single.s - jet.s).abs() < 1e-14);
        assert!((single.laplacian - jet.laplacian).abs() < 1e-12);
    }
    let mut g = vec![0.0; xs.len()];
    m.grad_x_block(&xs, 0.6, &[0.9], &mut g).unwrap();
    for (i, jet) in batch.iter().enumerate() {
        assert_eq!(&g[2 * i..2 * i + 2], &jet.grad_x[..]);
    }
}

#[test]
fn linear_modulation_gives_exact_time_derivative() {
    // phi(tau) = tau on a single linear layer: s = W x + tau A B x + b
    let cfg = ModelConfig { dim: 2, param_dim: 0, depth_main: 1, depth_hyper: 1, ..ModelConfig::default() };
    let mut m = FieldModel::init(cfg, Normalization::identity(2, 0), 3).unwrap();
    let hyper = m.layout.hyper[0];
    let main = m.layout.main[0];
    let p = m.params_mut();
    p[hyper.w] = 1.0;
    p[hyper.bias] = 0.0;
    for (k, v) in p[main.a..main.a + 3].iter_mut().enumerate() {
        *v = 0.5 + k as f64;
    }
    let layer = m.layer(0);
    let x = [0.7, -1.9];
    let coeff = layer.a.matvec(&layer.b.matvec(&x).unwrap()).unwrap()[0];
    for tau in [0.0, 0.3, 1.0] {
        let dt = m.eval_jet(&x, tau, &[], false).unwrap().dt;
        assert!((dt - coeff).abs() <= 4.0 * f64::EPSILON * coeff.abs(), "{dt} vs {coeff}");
    }
}

#[test]
fn time_blind_hypernetwork_gives_zero_dt() {
    let mut m = active(small_config(2, 1), 12);
    let first = m.layout.hyper[0];
    for r in 0..first.n_out {
        m.params_mut()[first.w + r * first.n_in] = 0.0;
    }
    for tau in [0.0, 0.5, 0.9] {
        assert_eq!(m.eval_jet(&[0.3, 0.3], tau, &[1.4], true).unwrap().dt, 0.0);
    }
}

fn objective(m: &FieldModel, xs: &[f64], tau: f64, mu: &[f64], c: &BlockCoeffs) -> f64 {
    m.block_objective(xs, tau, mu, c, 17, None).unwrap().weighted(c)
}

fn check_param_gradient(m: &FieldModel, xs: &[f64], tau: f64, mu: &[f64]) {
    let c = BlockCoeffs { value: 0.7, tau: -1.1, grad: 0.9, lap: 0.3 };
    let mut g = vec![0.0; m.n_params()];
    m.block_objective(xs, tau, mu, &c, 17, Some(&mut g)).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..m.n_params() {
        let mut p = m.clone();
        p.params_mut()[i] += h;
        let fp = objective(&p, xs, tau, mu, &c);
        p.params_mut()[i] -= 2.0 * h;
        let fm = objective(&p, xs, tau, mu, &c);
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / fd.abs().max(1e-4));
    }
    assert!(worst < 1e-5, "worst relative gradient error {worst}");
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let xs = [0.3, -0.2, 0.9, 1.2, 0.0, -0.6, -0.4, 0.8, 0.1];
    check_param_gradient(&active(small_config(3, 2), 13), &xs, 0.4, &[1.1, 1.6]);
    let shared = ModelConfig { shared_modulation: true, ..small_config(3, 2) };
    check_param_gradient(&active(shared, 14), &xs, 0.8, &[0.6, 1.0]);
    let stochastic = ModelConfig { laplacian: LaplacianMode::Hutchinson { probes: 20 }, laplacian_cap: 2, ..small_config(3, 0) };
    check_param_gradient(&active(stochastic, 15), &xs, 0.2, &[]);
}

#[test]
fn laplacian_cap_and_hutchinson() {
    let cfg = ModelConfig { laplacian_cap: 2, ..small_config(3, 0) };
    let m = active(cfg.clone(), 16);
    assert!(matches!(m.eval_jet(&[0.1, 0.2, 0.3], 0.5, &[], true), Err(Error::LaplacianCap { dim: 3, cap: 2 })));
    assert!(m.eval_jet(&[0.1, 0.2, 0.3], 0.5, &[], false).is_ok());
    let hcfg = ModelConfig { laplacian: LaplacianMode::Hutchinson { probes: 4000 }, ..cfg };
    assert!(hcfg.hutchinson_active());
    let h = FieldModel::from_parts(hcfg, m.normalization().clone(), m.params().to_vec()).unwrap();
    let est = h.eval_jet(&[0.1, 0.2, 0.3], 0.5, &[], true).unwrap().laplacian;
    let big = ModelConfig { laplacian_cap: 32, ..m.config().clone() };
    let exact = FieldModel::from_parts(big, m.normalization().clone(), m.params().to_vec())
        .unwrap()
        .eval_jet(&[0.1, 0.2, 0.3], 0.5, &[], true)
        .unwrap()
        .laplacian;
    assert!((est - exact).abs() < 0.05 * exact.abs().max(0.1), "{est} vs {exact}");
}

#[test]
fn chunked_directions_match_taped_route() {
    // 20 inputs need two tangent passes
    let cfg = ModelConfig { depth_main: 3, width_main: 6, ..small_config(20, 1) };
    let m = active(cfg, 18);
    let x: Vec<f64> = (0..20).map(|j| (j as f64 * 0.3).cos()).collect();
    let fast = m.eval_jet(&x, 0.3, &[1.0], true).unwrap();
    let taped = m.eval_jet_taped(&x, 0.3, &[1.0], true).unwrap();
    assert!(rel(fast.laplacian, taped.laplacian, 1e-3) < 1e-10);
    for j in 0..20 {
        assert!(rel(fast.grad_x[j], taped.grad_x[j], 1e-3) < 1e-10);
    }
}

#[test]
fn non_finite_input_is_reported() {
    let m = active(small_config(2, 1), 19);
    assert!(matches!(m.eval_jet(&[f64::NAN, 0.0], 0.5, &[1.0], false), Err(Error::NonFinite { .. })));
}
