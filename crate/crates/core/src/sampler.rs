//! Ensemble generation by Euler-Maruyama on `dX = grad s(X, tau, mu) dtau + eps dW_tau`.
//!
//! The field lives on normalized time `tau = (t - t0) / T`. In physical time
//! the same process reads `dX = grad s / T dt + eps / sqrt(T) dW_t`.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{Provenance, SnapshotDataset};
use crate::model::{Normalization, ScalarField};
use crate::rng;
use crate::{Error, Result};

/// Samples per field evaluation; fixed so results do not depend on threading.
const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePlan {
    pub mu: Vec<f64>,
    /// Euler-Maruyama steps over the whole horizon.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub eps: f64,
    /// Proceed when `eps` differs from the training value.
    #[serde(default)]
    pub allow_eps_mismatch: bool,
    #[serde(default)]
    pub seed: u64,
    /// Physical output times; the first must be the start of the horizon.
    pub times: Vec<f64>,
    /// Per-coordinate periods; periodic coordinates are wrapped after every
    /// step. Empty when nothing is periodic.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub periods: Vec<Option<f64>>,
}

fn default_steps() -> usize {
    512
}

impl SamplePlan {
    pub fn sha256(&self) -> String {
        let json = serde_json::to_vec(self).expect("plan serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Timing of one generation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub steps: usize,
    pub samples: usize,
    pub seconds: f64,
    pub steps_per_second: f64,
    pub checkpoint_id: Option<String>,
    pub plan_sha256: String,
}

pub fn runtime_report(plan: &SamplePlan, steps: usize, samples: usize, seconds: f64, checkpoint_id: Option<String>) -> RuntimeReport {
    RuntimeReport {
        steps,
        samples,
        seconds,
        steps_per_second: if seconds > 0.0 { steps as f64 / seconds } else { 0.0 },
        checkpoint_id,
        plan_sha256: plan.sha256(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub dataset: SnapshotDataset,
    pub steps: usize,
    pub seconds: f64,
    pub warnings: Vec<String>,
}

/// Integer step counts between consecutive output times, about `steps` in total.
fn step_schedule(taus: &[f64], steps: usize) -> Vec<usize> {
    taus.windows(2).map(|w| ((w[1] - w[0]) * steps as f64 - 1e-9).ceil().max(0.0) as usize).collect()
}

/// Integrates `initial` (`n x d`, row-major, at the first plan time) forward.
pub fn generate<F: ScalarField + Sync>(
    field: &F,
    norm: &Normalization,
    plan: &SamplePlan,
    trained_eps: f64,
    initial: &[f64],
) -> Result<SampleOutput> {
    generate_from_checkpoint(field, norm, plan, trained_eps, initial, None)
}

/// [`generate`], recording the checkpoint id in the output's provenance.
pub fn generate_from_checkpoint<F: ScalarField + Sync>(
    field: &F,
    norm: &Normalization,
    plan: &SamplePlan,
    trained_eps: f64,
    initial: &[f64],
    checkpoint_id: Option<&str>,
) -> Result<SampleOutput> {
    let mut warnings = Vec::new();
    if plan.eps != trained_eps {
        if !plan.allow_eps_mismatch {
            return Err(Error::EpsMismatch { requested: plan.eps, trained: trained_eps });
        }
        warnings.push(format!("sampling with eps = {} although the model was trained with eps = {}", plan.eps, trained_eps));
    }
    let d = field.dim();
    if !plan.periods.is_empty() && plan.periods.len() != d {
        return Err(Error::config("sample.periods", format!("{} periods for dimension {d}", plan.periods.len())));
    }
    if plan.periods.iter().flatten().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::config("sample.periods", "periods must be positive"));
    }
    if initial.is_empty() || initial.len() % d != 0 {
        return Err(Error::Shape(format!("initial ensemble of {} values is not a nonempty multiple of {d}", initial.len())));
    }
    if plan.times.is_empty() {
        return Err(Error::config("sample.times", "need at least one output time"));
    }
    let taus: Vec<f64> = plan.times.iter().map(|&t| norm.tau(t)).collect();
    if taus[0].abs() > 1e-9 || taus.iter().any(|t| !(-1e-9..=1.0 + 1e-9).contains(t)) || taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(
            "sample.times",
            format!("output times must increase within [{}, {}] starting at the left end", norm.t0, norm.time(1.0)),
        ));
    }
    let schedule = step_schedule(&taus, plan.steps);
    let n = initial.len() / d;
    let started = Instant::now();
    let chunks: Vec<(usize, &[f64])> = initial.chunks(CHUNK * d).enumerate().collect();
    let threads = std::thread::available_parallelism().map(|t| t.get()).unwrap_or(1).min(chunks.len());
    let results: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let chunks = &chunks;
                let (taus, schedule) = (&taus, &schedule);
                scope.spawn(move || {
                    chunks
                        .iter()
                        .skip(w)
                        .step_by(threads)
                        .map(|(c, xs)| integrate_chunk(field, plan, taus, schedule, c * CHUNK, xs))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut per_worker: Vec<std::vec::IntoIter<Result<Vec<Vec<f64>>>>> =
            handles.into_iter().map(|h| h.join().expect("sampler thread panicked").into_iter()).collect();
        (0..chunks.len()).map(|c| per_worker[c % threads].next().expect("chunk result")).collect()
    });
    let mut per_time = vec![Vec::with_capacity(n * d); taus.len()];
    for r in results {
        for (j, snap) in r?.into_iter().enumerate() {
            per_time[j].extend(snap);
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    let data: Vec<f32> = per_time.concat().into_iter().map(|v| v as f32).collect();
    let provenance = Provenance::new(
        "sampler",
        serde_json::json!({ "plan": plan, "plan_sha256": plan.sha256(), "checkpoint_id": checkpoint_id }),
        plan.seed,
    );
    let dataset = SnapshotDataset::new(d, n, plan.times.clone(), vec![plan.mu.clone()], true, provenance, data)?
        .with_periods(plan.periods.clone())?;
    Ok(SampleOutput { dataset, steps: schedule.iter().sum(), seconds, warnings })
}

/// One chunk's states at every output time.
fn integrate_chunk<F: ScalarField>(
    field: &F,
    plan: &SamplePlan,
    taus: &[f64],
    schedule: &[usize],
    first: usize,
    xs: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let d = field.dim();
    let mut state = xs.to_vec();
    wrap(&mut state, &plan.periods);
    let mut grad = vec![0.0; state.len()];
    let mut rngs: Vec<_> = (0..state.len() / d).map(|i| rng::stream(plan.seed, rng::purpose::SAMPLER, (first + i) as u64)).collect();
    let mut out = vec![state.clone()];
    for (j, &k) in schedule.iter().enumerate() {
        if k == 0 {
            out.push(state.clone());
            continue;
        }
        let h = (taus[j + 1] - taus[j]) / k as f64;
        let noise = plan.eps * h.sqrt();
        for s in 0..k {
            let tau = taus[j] + h * s as f64;
            field.grad_x_block(&state, tau, &plan.mu, &mut grad)?;
            for ((x, g), rng) in state.chunks_exact_mut(d).zip(grad.chunks_exact(d)).zip(rngs.iter_mut()) {
                for (xi, gi) in x.iter_mut().zip(g) {
                    *xi += gi * h;
                    if plan.eps != 0.0 {
                        *xi += noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            if state.iter().any(|v| !v.is_finite()) {
                let t = taus[j] + h * (s + 1) as f64;
                return Err(Error::non_finite(format!("sample state at normalized time {t:.6}")));
            }
            wrap(&mut state, &plan.periods);
        }
        out.push(state.clone());
    }
    Ok(out)
}

fn wrap(state: &mut [f64], periods: &[Option<f64>]) {
    if periods.is_empty() {
        return;
    }
    for x in state.chunks_exact_mut(periods.len()) {
        for (xi, p) in x.iter_mut().zip(periods) {
            if let Some(p) = p {
                *xi = xi.rem_euclid(*p);
            }
        }
    }
}
