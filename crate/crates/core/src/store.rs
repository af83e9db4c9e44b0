//! File formats.
//!
//! Both binary formats share one layout:
//!
//! ```text
//! <magic> v<version>\n
//! <one-line JSON header>\n
//! sha256:<hex digest of header line + payload>\n
//! <little-endian payload>
//! ```
//!
//! Datasets carry `f32` samples in `[mu][t][sample][dim]` order; checkpoints
//! carry the `f64` parameter vector in layout order. Samples are widened to
//! `f64` only when they are used. Every write goes to a temporary file in
//! the target directory and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{Provenance, SnapshotDataset};
use crate::model::{FieldModel, ModelConfig, Normalization};
use crate::{Error, Result};

pub const DATASET_MAGIC: &str = "HOAM-DATASET";
pub const CHECKPOINT_MAGIC: &str = "HOAM-CHECKPOINT";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    schema_version: u32,
    dim: usize,
    n_samples: usize,
    n_times: usize,
    n_mu: usize,
    times: Vec<f64>,
    mus: Vec<Vec<f64>>,
    paired: bool,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    periods: Vec<Option<f64>>,
}

/// Everything about a checkpoint except its weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub normalization: Normalization,
    pub train_eps: f64,
    pub seed: u64,
    pub iteration: usize,
    pub n_params: usize,
}

/// A model plus the training facts inference needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: FieldModel,
    pub train_eps: f64,
    pub seed: u64,
    pub iteration: usize,
}

impl Checkpoint {
    pub fn id(&self) -> String {
        checkpoint_id(&self.model)
    }
}

/// Short content hash of a model's configuration and weights.
pub fn checkpoint_id(model: &FieldModel) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model.config()).expect("config serializes"));
    h.update(serde_json::to_vec(model.normalization()).expect("normalization serializes"));
    for p in model.params() {
        h.update(p.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

fn digest(header: &[u8], payload: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(header);
    h.update(payload);
    hex::encode(h.finalize())
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

/// Write `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path.file_name().ok_or_else(|| format_err(path, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode(magic: &str, header: &impl Serialize, payload: &[u8]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(header.len() + payload.len() + 128);
    out.extend_from_slice(format!("{magic} v{SCHEMA_VERSION}\n").as_bytes());
    out.extend_from_slice(&header);
    out.push(b'\n');
    out.extend_from_slice(format!("sha256:{}\n", digest(&header, payload)).as_bytes());
    out.extend_from_slice(payload);
    out
}

struct Decoded<'b> {
    header: &'b [u8],
    payload: &'b [u8],
    digest: String,
}

impl Decoded<'_> {
    /// Length first, so truncation reports sizes rather than a bad digest.
    fn verify(&self, path: &Path, expected_len: usize) -> Result<()> {
        if self.payload.len() != expected_len {
            return Err(format_err(
                path,
                format!("payload is {} bytes, header declares {expected_len} bytes", self.payload.len()),
            ));
        }
        if digest(self.header, self.payload) != self.digest {
            return Err(format_err(path, "digest mismatch: header or payload was modified"));
        }
        Ok(())
    }
}

/// Split a file into header JSON, payload and stored digest after checking
/// magic and version.
fn decode<'b>(path: &Path, bytes: &'b [u8], magic: &str) -> Result<Decoded<'b>> {
    let mut rest = bytes;
    let mut line = |what: &str| -> Result<&'b [u8]> {
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| format_err(path, format!("missing {what} line")))?;
        let (l, r) = rest.split_at(end);
        rest = &r[1..];
        Ok(l)
    };
    let first = String::from_utf8_lossy(line("magic")?).into_owned();
    let (m, version) = first.split_once(" v").ok_or_else(|| format_err(path, format!("not a {magic} file")))?;
    if m != magic {
        return Err(format_err(path, format!("expected a {magic} file, found `{m}`")));
    }
    let version: u32 = version.parse().map_err(|_| format_err(path, format!("bad version `{version}`")))?;
    if version != SCHEMA_VERSION {
        return Err(format_err(path, format!("schema version {version} is not supported (this build reads {SCHEMA_VERSION})")));
    }
    let header = line("header")?;
    let digest = std::str::from_utf8(line("digest")?)
        .ok()
        .and_then(|d| d.strip_prefix("sha256:"))
        .ok_or_else(|| format_err(path, "malformed digest line"))?
        .to_owned();
    Ok(Decoded { header, payload: rest, digest })
}

fn payload_len(path: &Path, counts: &[usize], width: usize) -> Result<usize> {
    counts
        .iter()
        .try_fold(width, |acc, &c| acc.checked_mul(c))
        .ok_or_else(|| format_err(path, "declared payload size overflows"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn dataset_bytes(ds: &SnapshotDataset) -> Vec<u8> {
    let header = DatasetHeader {
        schema_version: SCHEMA_VERSION,
        dim: ds.dim(),
        n_samples: ds.n_samples(),
        n_times: ds.n_times(),
        n_mu: ds.n_mu(),
        times: ds.times().to_vec(),
        mus: ds.mus().to_vec(),
        paired: ds.paired(),
        provenance: ds.provenance().clone(),
        periods: ds.periods().to_vec(),
    };
    let mut payload = Vec::with_capacity(ds.data().len() * 4);
    for v in ds.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    encode(DATASET_MAGIC, &header, &payload)
}

pub fn save_dataset(path: &Path, ds: &SnapshotDataset) -> Result<()> {
    write_atomic(path, &dataset_bytes(ds))
}

pub fn load_dataset(path: &Path) -> Result<SnapshotDataset> {
    let bytes = read(path)?;
    let file = decode(path, &bytes, DATASET_MAGIC)?;
    let h: DatasetHeader = serde_json::from_slice(file.header).map_err(|e| format_err(path, format!("header: {e}")))?;
    if h.times.len() != h.n_times || h.mus.len() != h.n_mu {
        return Err(format_err(path, "header axis lengths disagree with declared counts"));
    }
    let len = payload_len(path, &[h.n_mu, h.n_times, h.n_samples, h.dim], 4)?;
    file.verify(path, len)?;
    let data = file.payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    SnapshotDataset::new(h.dim, h.n_samples, h.times, h.mus, h.paired, h.provenance, data)
        .and_then(|ds| ds.with_periods(h.periods))
        .map_err(|e| format_err(path, e.to_string()))
}

pub fn checkpoint_bytes(ck: &Checkpoint) -> Vec<u8> {
    let header = CheckpointHeader {
        schema_version: SCHEMA_VERSION,
        model: ck.model.config().clone(),
        normalization: ck.model.normalization().clone(),
        train_eps: ck.train_eps,
        seed: ck.seed,
        iteration: ck.iteration,
        n_params: ck.model.params().len(),
    };
    let mut payload = Vec::with_capacity(ck.model.params().len() * 8);
    for v in ck.model.params() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    encode(CHECKPOINT_MAGIC, &header, &payload)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read(path)?;
    let file = decode(path, &bytes, CHECKPOINT_MAGIC)?;
    let h: CheckpointHeader = serde_json::from_slice(file.header).map_err(|e| format_err(path, format!("header: {e}")))?;
    let len = payload_len(path, &[h.n_params], 8)?;
    file.verify(path, len)?;
    let params = file.payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let model = FieldModel::from_parts(h.model, h.normalization, params).map_err(|e| format_err(path, e.to_string()))?;
    Ok(Checkpoint { model, train_eps: h.train_eps, seed: h.seed, iteration: h.iteration })
}

/// Pretty JSON with a trailing newline.
pub fn save_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| format_err(path, e.to_string()))
}

/// Comma-separated values with a header row.
pub fn save_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
