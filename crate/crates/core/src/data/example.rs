use super::{label_positive, resize_nearest, CoverTruth, FrameKind, Sample, Vocabulary, EOS, START, UNK};
use crate::config::{FrameFeaturizer, RunConfig};
use crate::encoders::FrameBatch;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// A sample mapped to ids and tensors, ready for the model.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    /// Encoder input: fixed-vocabulary ids (OOVs as `UNK`), truncated to `encode_steps`.
    pub article_ids: Vec<usize>,
    /// Extended ids of the same tokens; OOVs get `V + k`.
    pub source_ext_ids: Vec<usize>,
    /// Source OOV strings in order of first appearance.
    pub oovs: Vec<String>,
    /// `START` followed by the fixed-vocabulary ids of `targets[..len-1]`.
    pub decoder_inputs: Vec<usize>,
    /// Extended-vocabulary target ids; EOS is appended only if the summary is shorter than `max_decode`.
    pub targets: Vec<usize>,
    /// Summary tokens truncated to `max_decode`.
    pub reference: Vec<String>,
    pub frames: FrameBatch,
    pub positive: usize,
    /// Cosine similarity of the positive to the ground-truth cover, when one was given.
    pub positive_similarity: Option<f64>,
}

impl Example {
    pub fn prepare(sample: &Sample, vocab: &Vocabulary, cfg: &RunConfig) -> Result<Self> {
        sample.validate().map_err(|reason| Error::Data {
            line: None,
            id: Some(sample.id.clone()),
            reason,
        })?;
        let v = vocab.len();
        let article = &sample.article[..sample.article.len().min(cfg.encode_steps)];
        let mut oovs: Vec<String> = Vec::new();
        let mut article_ids = Vec::with_capacity(article.len());
        let mut source_ext_ids = Vec::with_capacity(article.len());
        for t in article {
            match vocab.get(t) {
                Some(id) => {
                    article_ids.push(id);
                    source_ext_ids.push(id);
                }
                None => {
                    let k = oovs.iter().position(|o| o == t).unwrap_or_else(|| {
                        oovs.push(t.clone());
                        oovs.len() - 1
                    });
                    article_ids.push(UNK);
                    source_ext_ids.push(v + k);
                }
            }
        }

        let reference: Vec<String> = sample.summary.iter().take(cfg.max_decode).cloned().collect();
        let mut targets: Vec<usize> = reference
            .iter()
            .map(|t| match vocab.get(t) {
                Some(id) => id,
                None => oovs.iter().position(|o| o == t).map(|k| v + k).unwrap_or(UNK),
            })
            .collect();
        if targets.len() < cfg.max_decode {
            targets.push(EOS);
        }
        let mut decoder_inputs = vec![START];
        decoder_inputs.extend(targets[..targets.len() - 1].iter().map(|&t| if t >= v { UNK } else { t }));

        let (positive, positive_similarity) = match &sample.cover {
            CoverTruth::Index(i) => (*i, None),
            CoverTruth::Frame(truth) => {
                let (i, s) = label_positive(&sample.frames.frames, truth)?;
                (i, Some(s))
            }
        };

        Ok(Example {
            id: sample.id.clone(),
            article_ids,
            source_ext_ids,
            oovs,
            decoder_inputs,
            targets,
            reference,
            frames: frame_batch(sample, cfg)?,
            positive,
            positive_similarity,
        })
    }

    /// The string for an extended-vocabulary id.
    pub fn token<'a>(&'a self, vocab: &'a Vocabulary, id: usize) -> &'a str {
        if id < vocab.len() {
            vocab.token(id).unwrap_or("<unk>")
        } else {
            self.oovs.get(id - vocab.len()).map(String::as_str).unwrap_or("<unk>")
        }
    }

    pub fn candidates(&self) -> usize {
        self.frames.len()
    }
}

fn frame_batch(sample: &Sample, cfg: &RunConfig) -> Result<FrameBatch> {
    let f = &sample.frames;
    let to_float = |x: &[f32]| x.iter().map(|&v| v as Float).collect::<Vec<Float>>();
    match (cfg.frame_featurizer, f.kind) {
        (FrameFeaturizer::Passthrough, FrameKind::Feat) => {
            if f.frame_shape[0] != cfg.frame_feature_dim {
                return Err(Error::Mismatch(format!(
                    "sample {} has {}-dim frame features, config expects {}",
                    sample.id, f.frame_shape[0], cfg.frame_feature_dim
                )));
            }
            let data: Vec<Float> = f.frames.iter().flat_map(|x| to_float(x)).collect();
            Ok(FrameBatch::Features(Tensor::new(vec![f.len(), cfg.frame_feature_dim], data)?))
        }
        (FrameFeaturizer::Conv, FrameKind::Raw) => {
            let [h, w, c] = [f.frame_shape[0], f.frame_shape[1], f.frame_shape[2]];
            if c != cfg.frame_channels {
                return Err(Error::Mismatch(format!(
                    "sample {} has {c}-channel frames, config expects {}",
                    sample.id, cfg.frame_channels
                )));
            }
            let (oh, ow) = (cfg.frame_height, cfg.frame_width);
            let frames = f
                .frames
                .iter()
                .map(|x| {
                    let hwc = if (h, w) == (oh, ow) { x.clone() } else { resize_nearest(x, [h, w, c], oh, ow)? };
                    // Channel-last storage to channel-first tensors.
                    let mut chw = vec![0.0; c * oh * ow];
                    for (i, v) in hwc.iter().enumerate() {
                        let (pix, ch) = (i / c, i % c);
                        chw[ch * oh * ow + pix] = *v as Float;
                    }
                    Ok(Tensor::new(vec![c, oh, ow], chw)?)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FrameBatch::Raw(frames))
        }
        (feat, kind) => Err(Error::Mismatch(format!(
            "the {feat:?} featurizer cannot read {} frames",
            kind.as_str()
        ))),
    }
}
