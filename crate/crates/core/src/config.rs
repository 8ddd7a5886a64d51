//! Run configuration: every hyperparameter, with the published defaults.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFeaturizer {
    /// Small strided conv stack over raw `H × W × C` frames.
    Conv,
    /// Precomputed frame feature vectors.
    Passthrough,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionNormalize {
    Softmax,
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePosition {
    /// Divide the attended value sum by `√d`.
    Values,
    /// Divide the query-key logits by `√d`.
    Logits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditingGate {
    Scalar,
    Vector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Clamp every gradient element into `[clip_lo, clip_hi]`.
    Value,
    /// Rescale the whole gradient so its global L2 norm is at most `clip_hi`.
    Norm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encode_steps: usize,
    pub min_decode: usize,
    pub max_decode: usize,
    pub segment_len: usize,
    pub attn_layers: usize,
    pub ffn_dim: usize,
    pub batch_size: usize,
    pub beam_size: usize,
    pub vocab_size: usize,
    pub clip_lo: Float,
    pub clip_hi: Float,
    pub clip_mode: ClipMode,
    pub margin: Float,
    /// Negatives per positive in the hinge loss; `None` uses every negative.
    pub negatives: Option<usize>,
    pub lr: Float,
    pub adagrad_eps: Float,
    pub adagrad_init: Float,
    pub init_std: Float,
    pub layer_norm_eps: Float,
    pub seed: u64,
    pub epochs: usize,
    /// Validate every this many optimizer steps; 0 validates at each epoch end.
    pub validate_every: usize,
    pub keep_best: usize,
    pub disable_conditional_self_attention: bool,
    pub disable_global_attention: bool,
    pub frame_featurizer: FrameFeaturizer,
    pub frame_feature_dim: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub frame_channels: usize,
    pub frame_stride: usize,
    pub candidates: usize,
    pub global_attention_normalize: AttentionNormalize,
    pub scale_position: ScalePosition,
    pub editing_gate: EditingGate,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            embed_dim: 128,
            hidden_dim: 128,
            encode_steps: 100,
            min_decode: 10,
            max_decode: 30,
            segment_len: 5,
            attn_layers: 2,
            ffn_dim: 512,
            batch_size: 16,
            beam_size: 4,
            vocab_size: 50_000,
            clip_lo: -2.0,
            clip_hi: 2.0,
            clip_mode: ClipMode::Value,
            margin: 0.1,
            negatives: None,
            lr: 0.15,
            adagrad_eps: 1e-10,
            adagrad_init: 0.0,
            init_std: 0.05,
            layer_norm_eps: 1e-5,
            seed: 1,
            epochs: 10,
            validate_every: 0,
            keep_best: 5,
            disable_conditional_self_attention: false,
            disable_global_attention: false,
            frame_featurizer: FrameFeaturizer::Conv,
            frame_feature_dim: 128,
            frame_height: 128,
            frame_width: 64,
            frame_channels: 3,
            frame_stride: 120,
            candidates: 10,
            global_attention_normalize: AttentionNormalize::Softmax,
            scale_position: ScalePosition::Values,
            editing_gate: EditingGate::Scalar,
        }
    }
}

/// Named ablations that switch off one interaction path.
pub const ABLATIONS: [&str; 2] = ["disable_conditional_self_attention", "disable_global_attention"];

impl RunConfig {
    /// The flat key names accepted in config files.
    pub fn keys() -> Vec<String> {
        match serde_json::to_value(RunConfig::default()) {
            Ok(Value::Object(m)) => m.keys().cloned().collect(),
            _ => unreachable!("config serializes to an object"),
        }
    }

    /// Parses a flat JSON object, rejecting unknown keys by name.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(map) = value else {
            return Err(Error::Config {
                key: "<root>".into(),
                reason: "config must be a JSON object".into(),
            });
        };
        Self::from_map(map)
    }

    fn from_map(map: Map<String, Value>) -> Result<Self> {
        let known = Self::keys();
        if let Some(k) = map.keys().find(|k| !known.contains(k)) {
            return Err(Error::UnknownConfigKey(k.clone()));
        }
        let mut merged = match serde_json::to_value(RunConfig::default())? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        for (k, v) in map {
            merged.insert(k, v);
        }
        let cfg = Self::from_merged(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_merged(merged: Map<String, Value>) -> Result<Self> {
        let keys: Vec<String> = merged.keys().cloned().collect();
        serde_json::from_value(Value::Object(merged.clone())).map_err(|e| {
            // Find the offending key by probing each one against the defaults.
            let bad = keys.into_iter().find(|k| {
                let mut probe = match serde_json::to_value(RunConfig::default()) {
                    Ok(Value::Object(m)) => m,
                    _ => unreachable!(),
                };
                probe.insert(k.clone(), merged[k].clone());
                serde_json::from_value::<RunConfig>(Value::Object(probe)).is_err()
            });
            Error::Config {
                key: bad.unwrap_or_else(|| "<unknown>".into()),
                reason: e.to_string(),
            }
        })
    }

    /// Sets one key from its command-line text; values parse as JSON, falling back to a string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        if !Self::keys().iter().any(|k| k == key) {
            return Err(Error::UnknownConfigKey(key.to_string()));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut map = match serde_json::to_value(&*self)? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        map.insert(key.to_string(), value);
        let cfg = Self::from_merged(map)?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn to_json_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("encode_steps", self.encode_steps),
            ("max_decode", self.max_decode),
            ("segment_len", self.segment_len),
            ("ffn_dim", self.ffn_dim),
            ("batch_size", self.batch_size),
            ("beam_size", self.beam_size),
            ("frame_feature_dim", self.frame_feature_dim),
            ("frame_height", self.frame_height),
            ("frame_width", self.frame_width),
            ("frame_channels", self.frame_channels),
            ("frame_stride", self.frame_stride),
            ("candidates", self.candidates),
        ];
        for (k, v) in positive {
            if v == 0 {
                return bad(k, "must be positive");
            }
        }
        if self.hidden_dim % 2 != 0 {
            return bad("hidden_dim", "must be even (two encoder directions of hidden_dim / 2)");
        }
        if self.min_decode > self.max_decode {
            return bad("min_decode", "must not exceed max_decode");
        }
        if self.vocab_size < 5 || self.vocab_size > 50_000 {
            return bad("vocab_size", "must lie in [5, 50000]");
        }
        if !(self.clip_lo < self.clip_hi) {
            return bad("clip_lo", "must be below clip_hi");
        }
        if self.clip_mode == ClipMode::Norm && self.clip_hi <= 0.0 {
            return bad("clip_hi", "norm clipping needs a positive bound");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", "must be positive");
        }
        if !(self.adagrad_eps > 0.0) {
            return bad("adagrad_eps", "must be positive");
        }
        if !(self.adagrad_init >= 0.0) {
            return bad("adagrad_init", "must be non-negative");
        }
        if !(self.init_std > 0.0) {
            return bad("init_std", "must be positive");
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps", "must be positive");
        }
        if !(self.margin >= 0.0) {
            return bad("margin", "must be non-negative");
        }
        if self.negatives == Some(0) {
            return bad("negatives", "must be positive when set");
        }
        if self.keep_best == 0 {
            return bad("keep_best", "must be positive");
        }
        Ok(())
    }

    /// Enables one named ablation.
    pub fn apply_ablation(&mut self, name: &str) -> Result<()> {
        match name {
            "disable_conditional_self_attention" => self.disable_conditional_self_attention = true,
            "disable_global_attention" => self.disable_global_attention = true,
            other => return Err(Error::UnknownConfigKey(other.to_string())),
        }
        Ok(())
    }
}
