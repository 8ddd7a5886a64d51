//! Samples, dataset manifests, vocabulary and candidate-frame preparation.

mod example;
mod frames;
mod io;
mod synth;
mod vocab;

pub use example::Example;
pub use frames::{cosine_similarity, label_positive, resize_nearest, sample_candidates};
pub use io::{load_dataset, parse_dataset, write_dataset, FrameStorage};
pub use synth::{generate, keyword, planted_cover, summary_rule, theme_word, SyntheticSpec, TopicCue, MARKER};
pub use vocab::{Vocabulary, EOS, PAD, START, UNK};

/// Whether frames are raw pixel arrays or precomputed feature vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    /// `H × W × C` arrays, channel last.
    Raw,
    /// Flat feature vectors.
    Feat,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Raw => "raw",
            FrameKind::Feat => "feat",
        }
    }
}

/// Candidate frames of one sample, stored row-major in `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub kind: FrameKind,
    /// Shape of a single frame (`[H, W, C]` or `[F]`).
    pub frame_shape: Vec<usize>,
    pub frames: Vec<Vec<f32>>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CoverTruth {
    /// Index of the positive candidate.
    Index(usize),
    /// The ground-truth cover in the same space as the candidates.
    Frame(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub article: Vec<String>,
    pub summary: Vec<String>,
    pub frames: FrameSet,
    pub cover: CoverTruth,
}

impl Sample {
    /// Checks the per-record invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.article.is_empty() {
            return Err("article has no tokens".into());
        }
        if self.summary.is_empty() {
            return Err("summary has no tokens".into());
        }
        if self.article.iter().chain(&self.summary).any(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err("tokens must be non-empty and contain no whitespace".into());
        }
        let f = &self.frames;
        if f.frames.is_empty() {
            return Err("no frames".into());
        }
        match (f.kind, f.frame_shape.len()) {
            (FrameKind::Raw, 3) | (FrameKind::Feat, 1) => {}
            (kind, _) => {
                return Err(format!("{} frames cannot have shape {:?}", kind.as_str(), f.frame_shape));
            }
        }
        if f.frame_shape.contains(&0) {
            return Err(format!("frame shape {:?} has a zero dimension", f.frame_shape));
        }
        let n = f.frame_len();
        if let Some(i) = f.frames.iter().position(|x| x.len() != n) {
            return Err(format!("frame {i} has {} values, expected {n}", f.frames[i].len()));
        }
        if f.frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite frame value".into());
        }
        match &self.cover {
            CoverTruth::Index(i) if *i >= f.len() => {
                Err(format!("cover index {i} out of range for {} frames", f.len()))
            }
            CoverTruth::Frame(x) if x.len() != n => {
                Err(format!("cover has {} values, frames have {n}", x.len()))
            }
            CoverTruth::Frame(x) if x.iter().any(|v| !v.is_finite()) => Err("non-finite cover value".into()),
            _ => Ok(()),
        }
    }
}
