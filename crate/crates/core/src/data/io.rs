//! JSONL dataset manifests with inline base64 or sidecar binary payloads.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CoverTruth, FrameKind, FrameSet, Sample};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    article: Vec<String>,
    summary: Vec<String>,
    frames: FramesRecord,
    cover: CoverRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FramesRecord {
    kind: String,
    /// `[n, ...frame shape]`.
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
    #[serde(default, rename = "ref", skip_serializing_if = "Option::is_none")]
    reference: Option<BinRef>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoverRecord {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
    #[serde(default, rename = "ref", skip_serializing_if = "Option::is_none")]
    reference: Option<BinRef>,
}

/// A little-endian `f32` array inside a sidecar file.
#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BinRef {
    /// Relative to the manifest directory; defaults to `<manifest>.bin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    /// Byte offset.
    offset: usize,
    /// Number of `f32` values.
    len: usize,
}

/// Where `write_dataset` puts frame payloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameStorage {
    Inline,
    Sidecar,
}

fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f32(bytes: &[u8]) -> std::result::Result<Vec<f32>, String> {
    if bytes.len() % 4 != 0 {
        return Err(format!("payload of {} bytes is not a whole number of f32 values", bytes.len()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn default_sidecar(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".bin");
    manifest.with_file_name(name)
}

/// Sidecar files keyed by their manifest-relative name (`None` = default).
type Sidecars = HashMap<Option<String>, Vec<u8>>;

fn read_ref(r: &BinRef, sidecars: &Sidecars) -> std::result::Result<Vec<f32>, String> {
    let bytes = sidecars.get(&r.file).ok_or("sidecar not loaded")?;
    let end = r.offset + 4 * r.len;
    if end > bytes.len() {
        return Err(format!("ref [{}, {end}) exceeds sidecar of {} bytes", r.offset, bytes.len()));
    }
    decode_f32(&bytes[r.offset..end])
}

fn parse_kind(kind: &str) -> std::result::Result<FrameKind, String> {
    match kind {
        "raw" => Ok(FrameKind::Raw),
        "feat" => Ok(FrameKind::Feat),
        other => Err(format!("unknown frame kind `{other}`")),
    }
}

fn payload_or_ref(
    payload: &Option<String>,
    reference: &Option<BinRef>,
    sidecars: &Sidecars,
) -> std::result::Result<Vec<f32>, String> {
    match (payload, reference) {
        (Some(p), None) => {
            let bytes = STANDARD.decode(p).map_err(|e| format!("bad base64 payload: {e}"))?;
            decode_f32(&bytes)
        }
        (None, Some(r)) => read_ref(r, sidecars),
        _ => Err("exactly one of `payload` and `ref` is required".into()),
    }
}

fn to_sample(rec: Record, sidecars: &Sidecars) -> std::result::Result<Sample, String> {
    let kind = parse_kind(&rec.frames.kind)?;
    let Some((&n, frame_shape)) = rec.frames.shape.split_first() else {
        return Err("frames.shape is empty".into());
    };
    let values = payload_or_ref(&rec.frames.payload, &rec.frames.reference, sidecars)?;
    let per: usize = frame_shape.iter().product();
    if values.len() != n * per {
        return Err(format!("frames.shape {:?} needs {} values, payload has {}", rec.frames.shape, n * per, values.len()));
    }
    let frames = if per == 0 { Vec::new() } else { values.chunks(per).map(|c| c.to_vec()).collect() };
    let cover = match rec.cover.kind.as_str() {
        "index" => {
            if rec.cover.payload.is_some() || rec.cover.reference.is_some() {
                return Err("index cover takes no payload".into());
            }
            CoverTruth::Index(rec.cover.index.ok_or("cover.index missing")?)
        }
        k => {
            if parse_kind(k)? != kind {
                return Err(format!("cover kind `{k}` differs from frame kind `{}`", kind.as_str()));
            }
            if rec.cover.index.is_some() {
                return Err("payload cover takes no index".into());
            }
            CoverTruth::Frame(payload_or_ref(&rec.cover.payload, &rec.cover.reference, sidecars)?)
        }
    };
    let sample = Sample {
        id: rec.id,
        article: rec.article,
        summary: rec.summary,
        frames: FrameSet {
            kind,
            frame_shape: frame_shape.to_vec(),
            frames,
        },
        cover,
    };
    sample.validate()?;
    Ok(sample)
}

fn sidecar_names(text: &str) -> Vec<Option<String>> {
    let mut names = Vec::new();
    for line in text.lines() {
        if !line.contains("\"ref\"") {
            continue;
        }
        if let Ok(rec) = serde_json::from_str::<Record>(line) {
            for r in [rec.frames.reference, rec.cover.reference].into_iter().flatten() {
                if !names.contains(&r.file) {
                    names.push(r.file);
                }
            }
        }
    }
    names
}

/// Parses manifest text; sidecar paths resolve against `manifest`.
pub fn parse_dataset(text: &str, manifest: &Path) -> Result<Vec<Sample>> {
    let mut sidecars = Sidecars::new();
    for name in sidecar_names(text) {
        let path = match &name {
            Some(f) => manifest.parent().unwrap_or(Path::new(".")).join(f),
            None => default_sidecar(manifest),
        };
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        sidecars.insert(name, bytes);
    }
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let samples = lines
        .par_iter()
        .map(|&(line, l)| {
            let value: serde_json::Value = serde_json::from_str(l).map_err(|e| Error::Data {
                line: Some(line),
                id: None,
                reason: format!("invalid JSON: {e}"),
            })?;
            let id = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
            let fail = |reason: String| Error::Data {
                line: Some(line),
                id: id.clone(),
                reason,
            };
            let rec: Record = serde_json::from_value(value).map_err(|e| fail(e.to_string()))?;
            to_sample(rec, &sidecars).map_err(fail)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = samples.first() {
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.frames.kind != first.frames.kind) {
            return Err(Error::Data {
                line: Some(lines[i].0),
                id: Some(s.id.clone()),
                reason: "frames of different kinds in one dataset".into(),
            });
        }
    } else {
        log::warn!("{}: dataset is empty", manifest.display());
    }
    Ok(samples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

/// Writes a manifest, with payloads inline or in `<manifest>.bin`.
pub fn write_dataset(path: &Path, samples: &[Sample], storage: FrameStorage) -> Result<()> {
    let mut out = String::new();
    let mut bin: Vec<u8> = Vec::new();
    let mut put = |values: &[f32]| -> (Option<String>, Option<BinRef>) {
        match storage {
            FrameStorage::Inline => (Some(encode_f32(values)), None),
            FrameStorage::Sidecar => {
                let offset = bin.len();
                bin.extend(values.iter().flat_map(|v| v.to_le_bytes()));
                let r = BinRef {
                    file: None,
                    offset,
                    len: values.len(),
                };
                (None, Some(r))
            }
        }
    };
    for s in samples {
        let flat: Vec<f32> = s.frames.frames.iter().flatten().copied().collect();
        let mut shape = vec![s.frames.len()];
        shape.extend(&s.frames.frame_shape);
        let (payload, reference) = put(&flat);
        let cover = match &s.cover {
            CoverTruth::Index(i) => CoverRecord {
                kind: "index".into(),
                index: Some(*i),
                payload: None,
                reference: None,
            },
            CoverTruth::Frame(x) => {
                let (payload, reference) = put(x);
                CoverRecord {
                    kind: s.frames.kind.as_str().into(),
                    index: None,
                    payload,
                    reference,
                }
            }
        };
        let rec = Record {
            id: s.id.clone(),
            article: s.article.clone(),
            summary: s.summary.clone(),
            frames: FramesRecord {
                kind: s.frames.kind.as_str().into(),
                shape,
                payload,
                reference,
            },
            cover,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    if storage == FrameStorage::Sidecar {
        let side = default_sidecar(path);
        fs::write(&side, bin).map_err(|e| Error::io(&side, e))?;
    }
    Ok(())
}
