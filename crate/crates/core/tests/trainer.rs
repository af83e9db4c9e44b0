use hoam::datagen::{oscillator, OscillatorConfig};
use hoam::model::{FieldModel, ModelConfig, Normalization};
use hoam::quadrature::QuadratureKind;
use hoam::trainer::{train, TrainConfig};
use hoam::Error;

fn data(n_samples: usize) -> hoam::SnapshotDataset {
    oscillator::generate(&OscillatorConfig { n_samples, ..Default::default() }, 0).unwrap()
}

fn model(ds: &hoam::SnapshotDataset, seed: u64) -> FieldModel {
    let cfg = ModelConfig { dim: 4, param_dim: 1, width_main: 16, depth_main: 3, ..Default::default() };
    FieldModel::init(cfg, Normalization::from_dataset(ds), seed).unwrap()
}

#[test]
fn zero_iterations_return_the_initial_model() {
    let ds = data(100);
    let m = model(&ds, 2);
    let out = train(m.clone(), &ds, &TrainConfig { iterations: 0, n_x: 8, n_t: 9, ..Default::default() }).unwrap();
    assert_eq!(out.model, m);
    assert!(out.report.loss_trace.is_empty());
    assert!(!out.report.diverged);
}

#[test]
fn same_seed_same_trace_and_weights() {
    let ds = data(200);
    for quadrature in [QuadratureKind::Simpson, QuadratureKind::MonteCarlo] {
        let cfg = TrainConfig { iterations: 20, n_x: 16, n_t: 17, quadrature, seed: 5, ..Default::default() };
        let a = train(model(&ds, 5), &ds, &cfg).unwrap();
        let b = train(model(&ds, 5), &ds, &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.model.params(), b.model.params());
        let c = train(model(&ds, 5), &ds, &TrainConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.report.loss_trace, c.report.loss_trace);
    }
}

#[test]
fn missing_endpoint_snapshot_is_refused() {
    let ds = data(50);
    let m = model(&ds, 0);
    let keep: Vec<usize> = (0..ds.n_times() - 1).collect();
    let truncated = ds.select_times(&keep).unwrap();
    match train(m, &truncated, &TrainConfig { iterations: 1, n_x: 8, n_t: 9, ..Default::default() }) {
        Err(Error::Dataset(msg)) => assert!(msg.contains("endpoint"), "{msg}"),
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("training accepted a dataset without its final snapshot"),
    }
}

#[test]
fn oscillator_simpson_run_stays_finite() {
    let ds = data(2000);
    let cfg = TrainConfig { iterations: 2000, n_x: 16, n_t: 129, seed: 0, ..Default::default() };
    let out = train(model(&ds, 0), &ds, &cfg).unwrap();
    assert!(!out.report.diverged, "{:?}", out.report.divergence);
    assert_eq!(out.report.loss_trace.len(), 2000);
    assert!(out.report.loss_trace.iter().all(|l| l.is_finite()));
    // the tail of the trace sits well below the starting loss
    let head = out.report.loss_trace[..50].iter().sum::<f64>() / 50.0;
    let tail = out.report.loss_trace[1950..].iter().sum::<f64>() / 50.0;
    assert!(tail < head - 100.0, "{head} -> {tail}");
}
