//! The `hoam` command line.
//!
//! Each subcommand reads one TOML file. `--seed` overrides the file's `seed`,
//! and relative paths in the file resolve against `--out-dir`, or the
//! `HOAM_OUT_DIR` environment variable, or the working directory. Every run
//! writes a `<stem>.config.json` next to its main output holding the resolved
//! configuration.
//!
//! Exit codes: 0 success, 2 configuration, 3 data, 4 numerical failure
//! (including a diverged training run, whose outputs are still written),
//! 5 I/O.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datagen::{oscillator, pic, trap, OscillatorConfig, PicCase, PicConfig, SnapshotDataset, TrapConfig};
use crate::loss::interior_profile;
use crate::metrics::{evaluate, MetricConfig, VlasovDomain};
use crate::model::{FieldModel, ModelConfig, Normalization};
use crate::quadbench::estimator_study;
use crate::quadrature::{QuadratureKind, QuadratureRule};
use crate::sampler::{generate_from_checkpoint, runtime_report, SamplePlan};
use crate::store::{self, Checkpoint};
use crate::trainer::{train_with, TrainConfig};
use crate::{Error, Result};

pub const OUT_DIR_ENV: &str = "HOAM_OUT_DIR";

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_IO: i32 = 5;

const GENERATORS: [&str; 4] = ["oscillator", "two-stream", "bump-on-tail", "trap"];

#[derive(Debug, Parser)]
#[command(name = "hoam", version, about = "Learn parametric population dynamics and sample new trajectories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a training or test dataset.
    Generate(Common),
    /// Fit a field model to a dataset.
    Train(Common),
    /// Integrate the learned SDE from an initial ensemble.
    Sample(Common),
    /// Compare a predicted dataset with the truth.
    Eval(Common),
    /// Export the interior loss integrand over normalized time.
    Profile(Common),
    /// Estimator error of each quadrature rule over node counts and seeds.
    Quadbench(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the `seed` key of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Root for relative paths; falls back to $HOAM_OUT_DIR.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Param(_) | Error::EpsMismatch { .. } | Error::LaplacianCap { .. } => EXIT_CONFIG,
        Error::Dataset(_) | Error::Format { .. } | Error::Shape(_) | Error::Range(_) => EXIT_DATA,
        Error::NonFinite { .. } | Error::SinkhornNotConverged { .. } => EXIT_NUMERIC,
        Error::Io { .. } => EXIT_IO,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one command; `Ok` carries a nonzero code when outputs were written
/// but the run failed numerically.
pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Generate(c) => cmd_generate(c),
        Command::Train(c) => cmd_train(c),
        Command::Sample(c) => cmd_sample(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Profile(c) => cmd_profile(c),
        Command::Quadbench(c) => cmd_quadbench(c),
    }
}

struct Context {
    root: Option<PathBuf>,
    seed_override: Option<u64>,
}

impl Context {
    fn new(c: &Common) -> Self {
        let root = c.out_dir.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from));
        Context { root, seed_override: c.seed }
    }

    fn path(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn seed(&self, file: Option<u64>) -> u64 {
        self.seed_override.or(file).unwrap_or(0)
    }

    /// Resolves an output path and creates its directory.
    fn output(&self, p: &Path) -> Result<PathBuf> {
        let out = self.path(p);
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(out)
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

/// `dir/name.ext` becomes `dir/name<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// `prefix` becomes `prefix<suffix>`, keeping any dots in the prefix.
fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateFile {
    generator: String,
    output: PathBuf,
    seed: Option<u64>,
    oscillator: Option<OscillatorConfig>,
    pic: Option<PicConfig>,
    trap: Option<TrapConfig>,
}

fn cmd_generate(c: &Common) -> Result<i32> {
    let ctx = Context::new(c);
    let mut file: GenerateFile = read_config(&ctx.path(&c.config))?;
    let seed = ctx.seed(file.seed);
    file.seed = Some(seed);
    let out = ctx.output(&file.output)?;
    let mut traces = None;
    let dataset = match file.generator.as_str() {
        "oscillator" => {
            let cfg = file.oscillator.get_or_insert_with(Default::default);
            oscillator::generate(cfg, seed)?
        }
        "two-stream" | "bump-on-tail" => {
            let cfg = file.pic.get_or_insert_with(Default::default);
            cfg.case = if file.generator == "two-stream" { PicCase::TwoStream } else { PicCase::BumpOnTail };
            let o = pic::generate(cfg, seed)?;
            traces = Some(o.traces);
            o.dataset
        }
        "trap" => {
            let cfg = file.trap.get_or_insert_with(Default::default);
            trap::generate(cfg, seed)?
        }
        other => {
            return Err(Error::config(
                "generator",
                format!("unknown generator `{other}`; valid names are {}", GENERATORS.join(", ")),
            ))
        }
    };
    store::save_dataset(&out, &dataset)?;
    if let Some(traces) = traces {
        let mut rows = Vec::new();
        for tr in &traces {
            for ((t, e), f) in tr.times.iter().zip(&tr.energy).zip(&tr.fundamental) {
                rows.push(vec![fmt(tr.mu), fmt(*t), fmt(*e), fmt(f[0]), fmt(f[1])]);
            }
        }
        store::save_csv(&sibling(&out, ".energy.csv"), &["mu", "t", "energy", "fundamental_re", "fundamental_im"], &rows)?;
    }
    store::save_json(&sibling(&out, ".config.json"), &json!({ "command": "generate", "config": file }))?;
    Ok(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    dataset: PathBuf,
    /// Prefix of every output file.
    output: PathBuf,
    seed: Option<u64>,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
}

fn cmd_train(c: &Common) -> Result<i32> {
    let ctx = Context::new(c);
    let mut file: TrainFile = read_config(&ctx.path(&c.config))?;
    let seed = ctx.seed(file.seed);
    file.seed = Some(seed);
    let data = store::load_dataset(&ctx.path(&file.dataset))?;
    file.model.dim = data.dim();
    file.model.param_dim = data.param_dim();
    file.train.seed = seed;
    let prefix = ctx.output(&file.output)?;
    let model = FieldModel::init(file.model.clone(), Normalization::from_dataset(&data), seed)?;
    let outcome = train_with(model, &data, &file.train, |_, _| {})?;
    let report = &outcome.report;
    let ck = Checkpoint { model: outcome.model, train_eps: file.train.eps, seed, iteration: report.iterations_completed };
    store::save_checkpoint(&with_suffix(&prefix, ".ckpt"), &ck)?;
    store::save_json(
        &with_suffix(&prefix, ".report.json"),
        &json!({ "report": report, "dataset": data.provenance(), "config": file }),
    )?;
    let rows: Vec<Vec<String>> = report.loss_trace.iter().enumerate().map(|(i, l)| vec![i.to_string(), fmt(*l)]).collect();
    store::save_csv(&with_suffix(&prefix, ".loss.csv"), &["iteration", "loss"], &rows)?;
    store::save_json(&with_suffix(&prefix, ".timing.json"), &json!({ "seconds": outcome.seconds, "checkpoint_id": report.checkpoint_id }))?;
    store::save_json(&with_suffix(&prefix, ".config.json"), &json!({ "command": "train", "config": file }))?;
    if report.diverged {
        eprintln!(
            "training diverged at iteration {} ({})",
            report.first_bad_iteration.unwrap_or_default(),
            report.divergence.as_deref().unwrap_or("non-finite value")
        );
        return Ok(EXIT_NUMERIC);
    }
    Ok(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleFile {
    checkpoint: PathBuf,
    /// Dataset whose first snapshot at `mu_index` is the initial ensemble.
    initial: PathBuf,
    #[serde(default)]
    mu_index: usize,
    /// Physics parameter; defaults to the one of the initial dataset.
    mu: Option<Vec<f64>>,
    #[serde(default = "default_sample_steps")]
    steps: usize,
    /// Defaults to the training value.
    eps: Option<f64>,
    #[serde(default)]
    allow_eps_mismatch: bool,
    /// Output times; default to those of the initial dataset.
    times: Option<Vec<f64>>,
    output: PathBuf,
    seed: Option<u64>,
}

fn default_sample_steps() -> usize {
    512
}

fn cmd_sample(c: &Common) -> Result<i32> {
    let ctx = Context::new(c);
    let mut file: SampleFile = read_config(&ctx.path(&c.config))?;
    let seed = ctx.seed(file.seed);
    file.seed = Some(seed);
    let ck = store::load_checkpoint(&ctx.path(&file.checkpoint))?;
    let init = store::load_dataset(&ctx.path(&file.initial))?;
    if file.mu_index >= init.n_mu() {
        return Err(Error::config("mu_index", format!("dataset has {} parameters", init.n_mu())));
    }
    let mu = file.mu.get_or_insert_with(|| init.mus()[file.mu_index].clone()).clone();
    let times = file.times.get_or_insert_with(|| init.times().to_vec()).clone();
    let eps = *file.eps.get_or_insert(ck.train_eps);
    let plan = SamplePlan {
        mu,
        steps: file.steps,
        eps,
        allow_eps_mismatch: file.allow_eps_mismatch,
        seed,
        times,
        periods: init.periods().to_vec(),
    };
    let out = ctx.output(&file.output)?;
    let id = ck.id();
    let initial = init.snapshot_f64(file.mu_index, 0);
    let norm = ck.model.normalization().clone();
    let result = generate_from_checkpoint(&ck.model, &norm, &plan, ck.train_eps, &initial, Some(&id))?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    store::save_dataset(&out, &result.dataset)?;
    let timing = runtime_report(&plan, result.steps, init.n_samples(), result.seconds, Some(id));
    store::save_json(&sibling(&out, ".timing.json"), &timing)?;
    store::save_json(&sibling(&out, ".config.json"), &json!({ "command": "sample", "config": file, "plan": plan }))?;
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
enum EvalKind {
    #[default]
    Generic,
    Vlasov,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    truth: PathBuf,
    #[serde(default)]
    truth_index: usize,
    prediction: PathBuf,
    #[serde(default)]
    prediction_index: usize,
    #[serde(default)]
    kind: EvalKind,
    /// Prefix of the report files.
    output: PathBuf,
    seed: Option<u64>,
    #[serde(default)]
    metrics: MetricConfig,
    /// Plasma domain for `kind = "vlasov"`; read from the truth's generator
    /// configuration when absent.
    vlasov: Option<VlasovDomain>,
}

fn vlasov_domain(truth: &SnapshotDataset) -> Result<VlasovDomain> {
    let cfg: PicConfig = serde_json::from_value(truth.provenance().config.clone()).map_err(|_| {
        Error::config("vlasov", "truth dataset does not come from a plasma generator; give [vlasov] length and cells")
    })?;
    Ok(VlasovDomain { length: cfg.length, cells: cfg.cells() })
}

fn cmd_eval(c: &Common) -> Result<i32> {
    let ctx = Context::new(c);
    let mut file: EvalFile = read_config(&ctx.path(&c.config))?;
    let seed = ctx.seed(file.seed);
    file.seed = Some(seed);
    let truth = store::load_dataset(&ctx.path(&file.truth))?;
    let pred = store::load_dataset(&ctx.path(&file.prediction))?;
    file.metrics.vlasov = match file.kind {
        EvalKind::Generic => None,
        EvalKind::Vlasov => Some(match &file.vlasov {
            Some(d) => d.clone(),
            None => vlasov_domain(&truth)?,
        }),
    };
    if c.seed.is_some() {
        file.metrics.projection_seed = seed;
    }
    let report = evaluate(&truth, file.truth_index, &pred, file.prediction_index, &file.metrics)?;
    let prefix = ctx.output(&file.output)?;
    store::save_json(
        &with_suffix(&prefix, ".report.json"),
        &json!({
            "report": report,
            "truth": truth.provenance(),
            "prediction": pred.provenance(),
            "config": file,
        }),
    )?;
    let mut header = vec!["t", "w2"];
    if report.energy_true.is_some() {
        header.extend(["energy_true", "energy_pred"]);
    }
    let rows = (0..report.times.len())
        .map(|j| {
            let mut row = vec![fmt(report.times[j]), fmt(report.w2[j])];
            if let (Some(et), Some(ep)) = (&report.energy_true, &report.energy_pred) {
                row.extend([fmt(et[j]), fmt(ep[j])]);
            }
            row
        })
        .collect::<Vec<_>>();
    store::save_csv(&with_suffix(&prefix, ".csv"), &header, &rows)?;
    store::save_json(&with_suffix(&prefix, ".config.json"), &json!({ "command": "eval", "config": file }))?;
    Ok(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    checkpoint: PathBuf,
    dataset: PathBuf,
    /// Defaults to the training value.
    eps: Option<f64>,
    #[serde(default = "default_profile_nodes")]
    nodes: usize,
    #[serde(default = "default_max_samples")]
    max_samples: usize,
    output: PathBuf,
    seed: Option<u64>,
}

fn default_profile_nodes() -> usize {
    257
}

fn default_max_samples() -> usize {
    256
}

fn cmd_profile(c: &Common) -> Result<i32> {
    let ctx = Context::new(c);
    let mut file: ProfileFile = read_config(&ctx.path(&c.config))?;
    file.seed = Some(ctx.seed(file.seed));
    if file.nodes < 2 {
        return Err(Error::config("nodes", "need at least 2"));
    }
    let ck = store::load_checkpoint(&ctx.path(&file.checkpoint))?;
    let data = store::load_dataset(&ctx.path(&file.dataset))?;
    let eps = *file.eps.get_or_insert(ck.train_eps);
    let norm = ck.model.normalization();
    let taus: Vec<f64> = (0..file.nodes).map(|i| i as f64 / (file.nodes - 1) as f64).collect();
    let q = interior_profile(&ck.model, &data, norm, &taus, eps, file.max_samples)?;
    let out = ctx.output(&file.output)?;
    let rows = taus.iter().zip(&q).map(|(&tau, &v)| vec![fmt(tau), fmt(norm.time(tau)), fmt(v)]).collect::<Vec<_>>();
    store::save_csv(&out, &["tau", "t", "q"], &rows)?;
    store::save_json(
        &sibling(&out, ".config.json"),
        &json!({ "command": "profile", "config": file, "checkpoint_id": ck.id() }),
    )?;
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Integrand {
    /// `sin(3t)` on `[0, 1]`.
    Sine,
    /// `1 + 2t - 3t^2 + 4t^5` on `[0, 1]`.
    Polynomial,
    /// The interior loss profile of a checkpoint on a dataset.
    Profile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadbenchFile {
    integrand: Integrand,
    #[serde(default = "default_node_counts")]
    node_counts: Vec<usize>,
    #[serde(default = "default_mc_seeds")]
    mc_seeds: usize,
    output: PathBuf,
    seed: Option<u64>,
    checkpoint: Option<PathBuf>,
    dataset: Option<PathBuf>,
    eps: Option<f64>,
    #[serde(default = "default_max_samples")]
    max_samples: usize,
    /// Simpson nodes of the reference integral for the profile integrand.
    #[serde(default = "default_reference_nodes")]
    reference_nodes: usize,
}

fn default_node_counts() -> Vec<usize> {
    vec![5, 9, 17, 33, 65]
}

fn default_mc_seeds() -> usize {
    50
}

fn default_reference_nodes() -> usize {
    1025
}

fn cmd_quadbench(c: &Common) -> Result<i32> {
    let ctx = Context::new(c);
    let mut file: QuadbenchFile = read_config(&ctx.path(&c.config))?;
    let seed = ctx.seed(file.seed);
    file.seed = Some(seed);
    if file.mc_seeds == 0 || file.node_counts.is_empty() {
        return Err(Error::config("quadbench", "need at least one node count and one seed"));
    }
    let mut checkpoint_id = None;
    let rows = match file.integrand {
        Integrand::Sine => estimator_study(
            |ts| Ok(ts.iter().map(|t| (3.0 * t).sin()).collect()),
            (1.0 - 3f64.cos()) / 3.0,
            &file.node_counts,
            file.mc_seeds,
            seed,
        )?,
        Integrand::Polynomial => estimator_study(
            |ts| Ok(ts.iter().map(|t| 1.0 + 2.0 * t - 3.0 * t * t + 4.0 * t.powi(5)).collect()),
            1.0 + 1.0 - 1.0 + 4.0 / 6.0,
            &file.node_counts,
            file.mc_seeds,
            seed,
        )?,
        Integrand::Profile => {
            let (Some(ckp), Some(dsp)) = (&file.checkpoint, &file.dataset) else {
                return Err(Error::config("quadbench", "the profile integrand needs `checkpoint` and `dataset`"));
            };
            let ck = store::load_checkpoint(&ctx.path(ckp))?;
            let data = store::load_dataset(&ctx.path(dsp))?;
            let eps = *file.eps.get_or_insert(ck.train_eps);
            let norm = ck.model.normalization().clone();
            let q = |ts: &[f64]| interior_profile(&ck.model, &data, &norm, ts, eps, file.max_samples);
            let reference_rule = QuadratureRule::new(QuadratureKind::Simpson, file.reference_nodes, 0.0, 1.0, None)?;
            let reference = reference_rule.integrate(&q(&reference_rule.nodes)?)?;
            checkpoint_id = Some(ck.id());
            estimator_study(q, reference, &file.node_counts, file.mc_seeds, seed)?
        }
    };
    let out = ctx.output(&file.output)?;
    let csv = rows
        .iter()
        .map(|r| vec![r.rule.to_string(), r.nodes.to_string(), r.errors.len().to_string(), fmt(r.mean), fmt(r.std), fmt(r.median)])
        .collect::<Vec<_>>();
    store::save_csv(&out, &["rule", "nodes", "seeds", "mean", "std", "median"], &csv)?;
    store::save_json(
        &sibling(&out, ".config.json"),
        &json!({ "command": "quadbench", "config": file, "checkpoint_id": checkpoint_id, "rows": rows }),
    )?;
    Ok(0)
}
