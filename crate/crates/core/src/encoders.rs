//! Article and video encoders.
//!
//! The article runs through a bidirectional LSTM over word embeddings. The
//! video is split into fixed-length segments of candidate frames; each frame
//! is featurized and projected (`relu(F_v · o)`), then a bidirectional LSTM
//! runs inside every segment and its final state summarizes the segment.

use crate::error::{Error, Result};
use crate::layers::{BiLstm, Init, Linear};
use crate::tensor::{ParamId, Tape, Tensor, Var};

pub struct ArticleEncoder {
    pub embedding: ParamId,
    pub rnn: BiLstm,
    pub vocab_size: usize,
    pub max_steps: usize,
}

/// Per-token contextual states and the article summary state.
pub struct ArticleEncoding {
    /// `T_d × d`.
    pub states: Var,
    /// `1 × d`: `[last forward; last backward]`.
    pub final_state: Var,
    /// `T_d × d/2` forward-direction half.
    pub forward: Var,
}

impl ArticleEncoder {
    pub fn new(
        init: &mut Init,
        embedding: ParamId,
        embed_dim: usize,
        hidden_dim: usize,
        vocab_size: usize,
        max_steps: usize,
    ) -> Result<Self> {
        Ok(ArticleEncoder {
            embedding,
            rnn: BiLstm::new(init, "article_rnn", embed_dim, hidden_dim / 2)?,
            vocab_size,
            max_steps,
        })
    }

    /// Encodes at most `max_steps` leading tokens.
    pub fn encode(&self, tape: &mut Tape, tokens: &[usize]) -> Result<ArticleEncoding> {
        if tokens.is_empty() {
            return Err(Error::Input("article has no tokens".into()));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} outside the vocabulary of {}",
                self.vocab_size
            )));
        }
        let tokens = &tokens[..tokens.len().min(self.max_steps)];
        let table = tape.param(self.embedding);
        let embedded = tape.gather_rows(table, tokens)?;
        let out = self.rnn.forward(tape, embedded)?;
        Ok(ArticleEncoding {
            states: out.states,
            final_state: out.final_state,
            forward: out.forward,
        })
    }
}

/// Frame indices per segment; the last segment repeats its final frame to fill `segment_len`.
pub fn segment_indices(frames: usize, segment_len: usize) -> Result<Vec<Vec<usize>>> {
    if frames == 0 {
        return Err(Error::Input("video has no frames".into()));
    }
    if segment_len == 0 {
        return Err(Error::Input("segment length must be positive".into()));
    }
    Ok((0..frames)
        .step_by(segment_len)
        .map(|start| {
            let end = (start + segment_len).min(frames);
            let mut seg: Vec<usize> = (start..end).collect();
            seg.resize(segment_len, end - 1);
            seg
        })
        .collect())
}

/// Splits frames into equal contiguous segments, padding the last one.
pub fn segment_frames<T: Clone>(frames: &[T], segment_len: usize) -> Result<Vec<Vec<T>>> {
    Ok(segment_indices(frames.len(), segment_len)?
        .into_iter()
        .map(|seg| seg.into_iter().map(|i| frames[i].clone()).collect())
        .collect())
}

/// Candidate frames as model input.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameBatch {
    /// `n × F` precomputed feature rows.
    Features(Tensor),
    /// One `C × H × W` tensor per frame.
    Raw(Vec<Tensor>),
}

impl FrameBatch {
    pub fn len(&self) -> usize {
        match self {
            FrameBatch::Features(t) => t.rows(),
            FrameBatch::Raw(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Three stride-2 `3 × 3` conv blocks, global average pooling and a linear map.
pub struct ConvStack {
    pub blocks: Vec<(ParamId, ParamId)>,
    pub out: Linear,
}

pub const CONV_CHANNELS: [usize; 3] = [8, 16, 32];

impl ConvStack {
    pub fn new(init: &mut Init, in_channels: usize, feature_dim: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut cin = in_channels;
        for (i, &cout) in CONV_CHANNELS.iter().enumerate() {
            let w = init.normal(&format!("frame_conv.{i}.w"), &[cout, cin, 3, 3])?;
            let b = init.normal(&format!("frame_conv.{i}.b"), &[cout])?;
            blocks.push((w, b));
            cin = cout;
        }
        let out = Linear::new(init, "frame_conv.out", cin, feature_dim)?;
        Ok(ConvStack { blocks, out })
    }

    /// `1 × feature_dim` descriptor of one `C × H × W` frame.
    pub fn forward(&self, tape: &mut Tape, frame: Var) -> Result<Var> {
        let mut x = frame;
        for &(w, b) in &self.blocks {
            let (w, b) = (tape.param(w), tape.param(b));
            let c = tape.conv2d(x, w, b, 2, 1)?;
            x = tape.relu(c)?;
        }
        let pooled = tape.avg_pool(x)?;
        Ok(self.out.forward(tape, pooled)?)
    }
}

/// Produces `M = relu(F_v · o)` for every candidate frame.
pub struct FrameEncoder {
    pub conv: Option<ConvStack>,
    pub proj: Linear,
    pub feature_dim: usize,
}

impl FrameEncoder {
    pub fn passthrough(init: &mut Init, feature_dim: usize, hidden_dim: usize) -> Result<Self> {
        Ok(FrameEncoder {
            conv: None,
            proj: Linear::new(init, "frame_proj", feature_dim, hidden_dim)?,
            feature_dim,
        })
    }

    pub fn conv(init: &mut Init, channels: usize, feature_dim: usize, hidden_dim: usize) -> Result<Self> {
        let conv = ConvStack::new(init, channels, feature_dim)?;
        Ok(FrameEncoder {
            conv: Some(conv),
            proj: Linear::new(init, "frame_proj", feature_dim, hidden_dim)?,
            feature_dim,
        })
    }

    /// `n × d` frame representations.
    pub fn featurize(&self, tape: &mut Tape, frames: &FrameBatch) -> Result<Var> {
        if frames.is_empty() {
            return Err(Error::Input("video has no frames".into()));
        }
        let descriptors = match (&self.conv, frames) {
            (None, FrameBatch::Features(t)) => {
                if t.cols() != self.feature_dim {
                    return Err(Error::Mismatch(format!(
                        "frame features have {} dims, model expects {}",
                        t.cols(),
                        self.feature_dim
                    )));
                }
                tape.constant(t.clone())
            }
            (Some(conv), FrameBatch::Raw(raw)) => {
                let mut rows = Vec::with_capacity(raw.len());
                for f in raw {
                    let v = tape.constant(f.clone());
                    rows.push(conv.forward(tape, v)?);
                }
                tape.concat(&rows, 0)?
            }
            (None, FrameBatch::Raw(_)) => {
                return Err(Error::Mismatch("raw frames given to the passthrough featurizer".into()))
            }
            (Some(_), FrameBatch::Features(_)) => {
                return Err(Error::Mismatch("feature vectors given to the conv featurizer".into()))
            }
        };
        let projected = self.proj.forward(tape, descriptors)?;
        Ok(tape.relu(projected)?)
    }
}

pub struct SegmentEncoder {
    pub rnn: BiLstm,
    pub segment_len: usize,
}

/// Hierarchical video states.
pub struct VideoEncoding {
    /// Candidate index lists per segment (padding repeats the last frame).
    pub segments: Vec<Vec<usize>>,
    /// Per segment, `T_f × d` frame-level recurrent states.
    pub frame_states: Vec<Var>,
    /// `T_s × d` segment summaries (final recurrent state of each segment).
    pub summaries: Var,
}

impl SegmentEncoder {
    pub fn new(init: &mut Init, hidden_dim: usize, segment_len: usize) -> Result<Self> {
        Ok(SegmentEncoder {
            rnn: BiLstm::new(init, "segment_rnn", hidden_dim, hidden_dim / 2)?,
            segment_len,
        })
    }

    /// Encodes `frames` (`n × d`, one row per candidate) segment by segment.
    pub fn encode(&self, tape: &mut Tape, frames: Var) -> Result<VideoEncoding> {
        let n = tape.shape(frames)[0];
        let segments = segment_indices(n, self.segment_len)?;
        let mut frame_states = Vec::with_capacity(segments.len());
        let mut finals = Vec::with_capacity(segments.len());
        for seg in &segments {
            let rows = tape.gather_rows(frames, seg)?;
            let out = self.rnn.forward(tape, rows)?;
            frame_states.push(out.states);
            finals.push(out.final_state);
        }
        let summaries = tape.concat(&finals, 0)?;
        Ok(VideoEncoding {
            segments,
            frame_states,
            summaries,
        })
    }
}
