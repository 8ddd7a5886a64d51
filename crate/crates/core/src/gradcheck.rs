//! Whole-model finite-difference gradient check at tiny dimensions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{FrameFeaturizer, RunConfig};
use crate::data::{CoverTruth, FrameKind, FrameSet, Sample, Vocabulary};
use crate::error::{Error, Result};
use crate::model::Dims;
use crate::tensor::{grad_check_params, Float, GradCheckReport};

pub const DEFAULT_EPS: Float = 1e-5;
pub const DEFAULT_TOL: Float = 1e-4;

/// `d = 8`, 6-token articles, 4 candidate frames in segments of 2, vocabulary of 20.
pub fn tiny_config(featurizer: FrameFeaturizer) -> RunConfig {
    RunConfig {
        embed_dim: 8,
        hidden_dim: 8,
        ffn_dim: 16,
        encode_steps: 6,
        min_decode: 1,
        max_decode: 5,
        segment_len: 2,
        vocab_size: 20,
        frame_featurizer: featurizer,
        frame_feature_dim: 6,
        frame_height: 8,
        frame_width: 4,
        frame_channels: 3,
        init_std: 0.3,
        ..Default::default()
    }
}

/// Two random samples whose vocabulary overflows 20 entries, so copying OOVs is exercised.
pub fn tiny_samples(cfg: &RunConfig, seed: u64) -> Vec<Sample> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|i| {
            let article: Vec<String> = (0..6).map(|_| format!("w{}", r.random_range(0..24))).collect();
            let mut summary: Vec<String> = (0..2).map(|_| article[r.random_range(0..6)].clone()).collect();
            summary.push(format!("w{}", r.random_range(0..24)));
            let (kind, shape) = match cfg.frame_featurizer {
                FrameFeaturizer::Passthrough => (FrameKind::Feat, vec![cfg.frame_feature_dim]),
                FrameFeaturizer::Conv => (
                    FrameKind::Raw,
                    vec![cfg.frame_height, cfg.frame_width, cfg.frame_channels],
                ),
            };
            let n: usize = shape.iter().product();
            let frames = (0..4).map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            Sample {
                id: format!("tiny-{i}"),
                article,
                summary,
                frames: FrameSet {
                    kind,
                    frame_shape: shape,
                    frames,
                },
                cover: CoverTruth::Index(r.random_range(0..4)),
            }
        })
        .collect()
}

/// Compares tape gradients of the mean micro-batch loss with central differences
/// for every parameter. `corrupt` names a parameter whose analytic gradient is
/// deliberately perturbed.
pub fn run(cfg: &RunConfig, seed: u64, eps: Float, tol: Float, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let samples = tiny_samples(cfg, seed);
    let vocab = Vocabulary::build(&samples, cfg.vocab_size)?;
    let model = Dims::new(cfg.clone(), vocab)?;
    let batch = samples.iter().map(|s| model.prepare(s)).collect::<Result<Vec<_>>>()?;
    let corrupt = match corrupt {
        Some(name) => Some(
            model
                .store
                .id(name)
                .ok_or_else(|| Error::Input(format!("no parameter named `{name}`")))?,
        ),
        None => None,
    };
    let report = grad_check_params(
        &model.store,
        |tape| model.net.batch_loss(tape, &batch).map_err(|e| match e {
            Error::Tensor(t) => t,
            other => crate::tensor::TensorError::Contract(other.to_string()),
        }),
        eps,
        tol,
        corrupt,
    )?;
    Ok(report)
}
