//! Checkpoints: a JSON manifest plus a raw little-endian float payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::Dims;
use crate::tensor::Float;
use crate::training::Adagrad;

pub const FORMAT: &str = "dims-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    Adagrad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub step: usize,
    pub epoch: usize,
    pub config: serde_json::Value,
    pub vocab: Vec<String>,
    /// `f32` or `f64`.
    pub dtype: String,
    /// Payload file name, relative to the manifest.
    pub payload: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metrics: Option<EvalReport>,
}

/// Progress counters stored alongside the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Progress {
    pub step: usize,
    /// Epoch the next step belongs to.
    pub epoch: usize,
}

pub struct Loaded {
    pub model: Dims,
    pub optimizer: Option<Adagrad>,
    pub progress: Progress,
    pub metrics: Option<EvalReport>,
}

fn dtype() -> &'static str {
    if std::mem::size_of::<Float>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>.bin` with the same stem.
pub fn save(
    path: &Path,
    model: &Dims,
    optimizer: Option<&Adagrad>,
    progress: Progress,
    metrics: Option<&EvalReport>,
) -> Result<()> {
    let mut bytes: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: &str, kind: TensorKind, shape: &[usize], data: &[Float]| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            kind,
            shape: shape.to_vec(),
            offset: bytes.len(),
        });
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (id, name, t) in model.store.iter() {
        push(name, TensorKind::Param, t.shape(), t.data());
        if let Some(opt) = optimizer {
            push(name, TensorKind::Adagrad, t.shape(), opt.accumulator(id));
        }
    }
    let bin = payload_path(path);
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        step: progress.step,
        epoch: progress.epoch,
        config: model.config.to_json_value(),
        vocab: model.vocab.tokens().to_vec(),
        dtype: dtype().into(),
        payload: bin.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
        tensors,
        metrics: metrics.cloned(),
    };
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format {} v{}",
            path.display(),
            m.format,
            m.version
        )));
    }
    Ok(m)
}

fn decode(bytes: &[u8], dtype: &str, offset: usize, n: usize) -> Result<Vec<Float>> {
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Checkpoint(format!("unknown dtype `{other}`"))),
    };
    let end = offset + n * width;
    if end > bytes.len() {
        return Err(Error::Checkpoint(format!("tensor at {offset} runs past the payload end")));
    }
    Ok(bytes[offset..end]
        .chunks_exact(width)
        .map(|c| {
            if width == 4 {
                f32::from_le_bytes(c.try_into().expect("4 bytes")) as Float
            } else {
                f64::from_le_bytes(c.try_into().expect("8 bytes")) as Float
            }
        })
        .collect())
}

pub fn load(path: &Path) -> Result<Loaded> {
    let m = read_manifest(path)?;
    let config = RunConfig::from_json_str(&m.config.to_string()).map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
    let vocab = Vocabulary::from_tokens(m.vocab.clone())?;
    let mut model = Dims::new(config, vocab)?;
    let bin = path.with_file_name(&m.payload);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;

    let has_opt = m.tensors.iter().any(|t| t.kind == TensorKind::Adagrad);
    let mut optimizer = has_opt.then(|| Adagrad::new(&model.store, model.config.lr, model.config.adagrad_eps, 0.0));
    let mut seen = vec![false; model.store.len()];
    for entry in &m.tensors {
        let id = model
            .store
            .id(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{}`", entry.name)))?;
        let expected = model.store.get(id).shape().to_vec();
        if expected != entry.shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has shape {:?}, model expects {expected:?}",
                entry.name, entry.shape
            )));
        }
        let data = decode(&bytes, &m.dtype, entry.offset, entry.shape.iter().product())?;
        match entry.kind {
            TensorKind::Param => {
                model.store.set_values(id, &data)?;
                seen[id.index()] = true;
            }
            TensorKind::Adagrad => {
                if let Some(opt) = optimizer.as_mut() {
                    opt.set_accumulator(id, &data)?;
                }
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let id = model.store.ids().nth(i).expect("index in range");
        return Err(Error::Checkpoint(format!("checkpoint lacks tensor `{}`", model.store.name(id))));
    }
    Ok(Loaded {
        model,
        optimizer,
        progress: Progress {
            step: m.step,
            epoch: m.epoch,
        },
        metrics: m.metrics,
    })
}

/// Manifests (`*.json`) in `dir`, sorted by name.
pub fn list(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "json") && read_manifest(&p).is_ok() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Removes a manifest and its payload.
pub fn remove(path: &Path) -> Result<()> {
    let bin = read_manifest(path).map(|m| path.with_file_name(m.payload)).unwrap_or_else(|_| payload_path(path));
    for p in [path.to_path_buf(), bin] {
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}
