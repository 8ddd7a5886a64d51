//! The full network: encoders, dual interaction, summary decoder and cover scorer.

use crate::beam::{beam_search, greedy, DecodeLimits, Hypothesis, StepModel};
use crate::config::{FrameFeaturizer, RunConfig};
use crate::data::{Example, Sample, Vocabulary, EOS, START, UNK};
use crate::encoders::{ArticleEncoder, FrameEncoder, SegmentEncoder};
use crate::error::{Error, Result};
use crate::generator::{hinge_loss, select_cover, CoverScorer, Decoder, DecoderMemory, DecoderState};
use crate::interaction::{ConditionalSelfAttention, DualInteraction, GlobalAttention, InteractionOutput};
use crate::layers::Init;
use crate::tensor::{Float, ParamId, ParameterStore, Tape, Tensor, Var};

/// Floor applied to target probabilities before the log.
pub const PROB_FLOOR: Float = 1e-12;

/// Parameter handles of every module; holds no values.
pub struct Network {
    pub embedding: ParamId,
    pub article: ArticleEncoder,
    pub frames: FrameEncoder,
    pub segments: SegmentEncoder,
    pub interaction: DualInteraction,
    pub decoder: Decoder,
    pub scorer: CoverScorer,
    pub margin: Float,
    pub negatives: Option<usize>,
    pub segment_len: usize,
}

/// Everything computed from the inputs before decoding.
pub struct Encoded {
    /// `T_d × d`.
    pub article: Var,
    /// `1 × d`.
    pub article_final: Var,
    /// `n × d` frame representations `M`.
    pub frames: Var,
    /// `T_s × d` segment summaries `S`.
    pub summaries: Var,
    pub interaction: InteractionOutput,
    /// `n × 1` cover scores.
    pub cover_scores: Var,
    pub memory: DecoderMemory,
    pub initial: DecoderState,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub seq: Var,
    pub pic: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub seq: Float,
    pub pic: Float,
    pub total: Float,
}

impl Network {
    pub fn build(init: &mut Init, cfg: &RunConfig, vocab_size: usize) -> Result<Self> {
        let d = cfg.hidden_dim;
        let embedding = init.normal("embedding", &[vocab_size, cfg.embed_dim])?;
        let article = ArticleEncoder::new(init, embedding, cfg.embed_dim, d, vocab_size, cfg.encode_steps)?;
        let frames = match cfg.frame_featurizer {
            FrameFeaturizer::Passthrough => FrameEncoder::passthrough(init, cfg.frame_feature_dim, d)?,
            FrameFeaturizer::Conv => FrameEncoder::conv(init, cfg.frame_channels, cfg.frame_feature_dim, d)?,
        };
        let segments = SegmentEncoder::new(init, d, cfg.segment_len)?;
        let conditional = if cfg.disable_conditional_self_attention {
            None
        } else {
            Some(ConditionalSelfAttention::new(
                init,
                d,
                cfg.attn_layers,
                cfg.ffn_dim,
                cfg.scale_position,
                cfg.layer_norm_eps,
            )?)
        };
        let global = if cfg.disable_global_attention {
            None
        } else {
            Some(GlobalAttention::new(init, d, cfg.global_attention_normalize)?)
        };
        let decoder = Decoder::new(init, embedding, cfg.embed_dim, d, vocab_size, cfg.editing_gate)?;
        let scorer = CoverScorer::new(init, d)?;
        Ok(Network {
            embedding,
            article,
            frames,
            segments,
            interaction: DualInteraction { conditional, global },
            decoder,
            scorer,
            margin: cfg.margin,
            negatives: cfg.negatives,
            segment_len: cfg.segment_len,
        })
    }

    pub fn encode(&self, tape: &mut Tape, ex: &Example) -> Result<Encoded> {
        let art = self.article.encode(tape, &ex.article_ids)?;
        let frames = self.frames.featurize(tape, &ex.frames)?;
        let video = self.segments.encode(tape, frames)?;
        let interaction = self.interaction.forward(tape, art.states, art.final_state, video.summaries)?;
        let segment_of: Vec<usize> = (0..ex.candidates()).map(|j| j / self.segment_len).collect();
        let cover = self.scorer.score(
            tape,
            frames,
            interaction.conditional,
            interaction.video,
            art.final_state,
            &segment_of,
        )?;
        let memory = DecoderMemory {
            article: art.states,
            video_aware: interaction.article,
            source_ext_ids: ex.source_ext_ids.clone(),
            oov_count: ex.oovs.len(),
        };
        let initial = self.decoder.initial_state(tape, art.final_state)?;
        Ok(Encoded {
            article: art.states,
            article_final: art.final_state,
            frames,
            summaries: video.summaries,
            interaction,
            cover_scores: cover.scores,
            memory,
            initial,
        })
    }

    /// Teacher-forced extended distributions, one `1 × (V + oov)` row per target.
    pub fn teacher_forced(&self, tape: &mut Tape, ex: &Example, enc: &Encoded) -> Result<Vec<Var>> {
        let mut state = enc.initial;
        let mut dists = Vec::with_capacity(ex.targets.len());
        for &input in &ex.decoder_inputs {
            let out = self.decoder.step(tape, state, input, &enc.memory)?;
            dists.push(out.final_dist);
            state = out.state;
        }
        Ok(dists)
    }

    /// Negatives used by the hinge loss for this sample.
    fn negatives(&self, tape: &Tape, ex: &Example, scores: Var) -> Vec<usize> {
        let mut negs: Vec<usize> = (0..ex.candidates()).filter(|&j| j != ex.positive).collect();
        if let Some(k) = self.negatives {
            let y = tape.data(scores);
            negs.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
            negs.truncate(k);
            negs.sort_unstable();
        }
        negs
    }

    /// Per-sample `L_seq`, `L_pic` and their sum.
    pub fn loss(&self, tape: &mut Tape, ex: &Example) -> Result<LossVars> {
        let enc = self.encode(tape, ex)?;
        let dists = self.teacher_forced(tape, ex, &enc)?;
        let mut terms = Vec::with_capacity(dists.len());
        for (dist, &target) in dists.iter().zip(&ex.targets) {
            if target >= tape.value(*dist).numel() {
                return Err(Error::Data {
                    line: None,
                    id: Some(ex.id.clone()),
                    reason: format!("target id {target} outside the extended vocabulary"),
                });
            }
            let p = tape.pick(*dist, &[target])?;
            let p = tape.clamp_min(p, PROB_FLOOR)?;
            terms.push(tape.ln(p)?);
        }
        let logs = tape.concat(&terms, 1)?;
        let total_log = tape.sum(logs)?;
        let seq = tape.scale(total_log, -1.0)?;
        if ex.positive >= ex.candidates() {
            return Err(Error::Data {
                line: None,
                id: Some(ex.id.clone()),
                reason: "positive index outside the candidates".into(),
            });
        }
        let negs = self.negatives(tape, ex, enc.cover_scores);
        let pic = hinge_loss(tape, enc.cover_scores, ex.positive, &negs, self.margin)?;
        let total = tape.add(seq, pic)?;
        Ok(LossVars { seq, pic, total })
    }

    /// Mean total loss over a micro-batch, for gradient checks.
    pub fn batch_loss(&self, tape: &mut Tape, batch: &[Example]) -> Result<Var> {
        let mut totals = Vec::with_capacity(batch.len());
        for ex in batch {
            totals.push(self.loss(tape, ex)?.total);
        }
        let joined = tape.concat(&totals, 0)?;
        let s = tape.sum(joined)?;
        Ok(tape.scale(s, 1.0 / batch.len() as Float)?)
    }
}

/// Output of `Dims::infer`.
#[derive(Clone, Debug)]
pub struct Inference {
    /// Extended-vocabulary ids, without EOS.
    pub tokens: Vec<usize>,
    pub summary: Vec<String>,
    pub finished: bool,
    pub cover: usize,
    pub scores: Vec<Float>,
    /// `T_d × T_s` global attention scores, absent when global attention is disabled.
    pub attention: Option<Tensor>,
}

/// A trained or freshly initialized model with its vocabulary and config.
pub struct Dims {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
    pub net: Network,
}

impl Dims {
    pub fn new(config: RunConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let net = Network::build(&mut Init::new(&mut store, config.seed, config.init_std), &config, vocab.len())?;
        Ok(Dims {
            config,
            vocab,
            store,
            net,
        })
    }

    pub fn prepare(&self, sample: &Sample) -> Result<Example> {
        Example::prepare(sample, &self.vocab, &self.config)
    }

    pub fn loss_values(&self, ex: &Example) -> Result<LossValues> {
        let mut tape = Tape::with_params(&self.store);
        let l = self.net.loss(&mut tape, ex)?;
        Ok(LossValues {
            seq: tape.data(l.seq)[0],
            pic: tape.data(l.pic)[0],
            total: tape.data(l.total)[0],
        })
    }

    /// Cover scores without decoding.
    pub fn cover_scores(&self, ex: &Example) -> Result<Vec<Float>> {
        let mut tape = Tape::with_params(&self.store);
        let enc = self.net.encode(&mut tape, ex)?;
        Ok(tape.data(enc.cover_scores).to_vec())
    }

    fn limits(&self) -> DecodeLimits {
        DecodeLimits {
            start: START,
            eos: EOS,
            min_len: self.config.min_decode,
            max_len: self.config.max_decode,
        }
    }

    /// Decodes a summary (beam search, or greedy when `beam == 1`) and scores the cover candidates.
    pub fn infer(&self, ex: &Example, beam: usize) -> Result<Inference> {
        let mut tape = Tape::with_params(&self.store);
        let enc = self.net.encode(&mut tape, ex)?;
        let scores = tape.data(enc.cover_scores).to_vec();
        let cover = select_cover(&scores)?;
        let attention = enc.interaction.scores.map(|e| tape.value(e).clone());
        let mut session = DecodeSession::new(self, &tape, &enc);
        let init = session.initial.clone();
        let hyp: Hypothesis = if beam == 1 {
            greedy(&mut session, init, self.limits())?
        } else {
            beam_search(&mut session, init, beam, self.limits())?
        };
        let tokens = hyp.content().to_vec();
        let summary = tokens.iter().map(|&t| ex.token(&self.vocab, t).to_string()).collect();
        Ok(Inference {
            tokens,
            summary,
            finished: hyp.finished,
            cover,
            scores,
            attention,
        })
    }

    /// Runs `f` on a decoding session for `ex`, e.g. to drive custom decoding loops.
    pub fn with_session<R>(&self, ex: &Example, f: impl FnOnce(&mut DecodeSession, DecodeLimits) -> R) -> Result<R> {
        let mut tape = Tape::with_params(&self.store);
        let enc = self.net.encode(&mut tape, ex)?;
        let mut session = DecodeSession::new(self, &tape, &enc);
        Ok(f(&mut session, self.limits()))
    }
}

/// Decoder state held as plain tensors so each step runs on its own scratch tape.
#[derive(Clone, Debug)]
pub struct StepState {
    pub hidden: Tensor,
    pub cell: Tensor,
    pub context: Tensor,
}

pub struct DecodeSession<'m> {
    model: &'m Dims,
    article: Tensor,
    video_aware: Tensor,
    source_ext_ids: Vec<usize>,
    oov_count: usize,
    pub initial: StepState,
}

impl<'m> DecodeSession<'m> {
    fn new(model: &'m Dims, tape: &Tape, enc: &Encoded) -> Self {
        DecodeSession {
            model,
            article: tape.value(enc.memory.article).clone(),
            video_aware: tape.value(enc.memory.video_aware).clone(),
            source_ext_ids: enc.memory.source_ext_ids.clone(),
            oov_count: enc.memory.oov_count,
            initial: StepState {
                hidden: tape.value(enc.initial.hidden).clone(),
                cell: tape.value(enc.initial.cell).clone(),
                context: tape.value(enc.initial.context).clone(),
            },
        }
    }

    /// Extended next-token distribution (probabilities) and the new state.
    pub fn distribution(&self, state: &StepState, token: usize) -> Result<(StepState, Vec<Float>)> {
        let mut tape = Tape::with_params(&self.model.store);
        let memory = DecoderMemory {
            article: tape.constant(self.article.clone()),
            video_aware: tape.constant(self.video_aware.clone()),
            source_ext_ids: self.source_ext_ids.clone(),
            oov_count: self.oov_count,
        };
        let s = DecoderState {
            hidden: tape.constant(state.hidden.clone()),
            cell: tape.constant(state.cell.clone()),
            context: tape.constant(state.context.clone()),
        };
        let input = if token >= self.model.vocab.len() { UNK } else { token };
        let out = self.model.net.decoder.step(&mut tape, s, input, &memory)?;
        let next = StepState {
            hidden: tape.value(out.state.hidden).clone(),
            cell: tape.value(out.state.cell).clone(),
            context: tape.value(out.state.context).clone(),
        };
        Ok((next, tape.data(out.final_dist).to_vec()))
    }
}

impl StepModel for DecodeSession<'_> {
    type State = StepState;

    fn step(&mut self, state: &StepState, token: usize) -> Result<(StepState, Vec<Float>)> {
        let (next, probs) = self.distribution(state, token)?;
        Ok((next, probs.into_iter().map(Float::ln).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FrameFeaturizer;
    use crate::data::{generate, SyntheticSpec};

    fn tiny() -> (Dims, Vec<Example>) {
        let spec = SyntheticSpec {
            samples: 4,
            feature_dim: 6,
            candidates: 4,
            segment_len: 2,
            ..Default::default()
        };
        let samples = generate(&spec).unwrap();
        let cfg = RunConfig {
            embed_dim: 6,
            hidden_dim: 8,
            ffn_dim: 16,
            segment_len: 2,
            frame_featurizer: FrameFeaturizer::Passthrough,
            frame_feature_dim: 6,
            min_decode: 2,
            max_decode: 12,
            init_std: 0.3,
            ..Default::default()
        };
        let vocab = Vocabulary::build(&samples, 30).unwrap();
        let model = Dims::new(cfg, vocab).unwrap();
        let ex = samples.iter().map(|s| model.prepare(s).unwrap()).collect();
        (model, ex)
    }

    #[test]
    fn losses_add_up_and_are_finite() {
        let (m, ex) = tiny();
        for e in &ex {
            let l = m.loss_values(e).unwrap();
            assert!(l.seq > 0.0 && l.pic >= 0.0);
            assert_eq!(l.total, l.seq + l.pic);
        }
    }

    #[test]
    fn ablations_drop_their_parameters() {
        let (m, _) = tiny();
        assert!(m.store.id("cond_gate.w").is_some() && m.store.id("global.f_h.w").is_some());
        let mut cfg = m.config.clone();
        cfg.disable_conditional_self_attention = true;
        cfg.disable_global_attention = true;
        let ab = Dims::new(cfg, m.vocab.clone()).unwrap();
        assert!(ab.store.id("cond_gate.w").is_none() && ab.store.id("global.f_h.w").is_none());
    }

    #[test]
    fn first_free_step_matches_teacher_forcing() {
        let (m, ex) = tiny();
        let e = &ex[0];
        let mut tape = Tape::with_params(&m.store);
        let enc = m.net.encode(&mut tape, e).unwrap();
        let forced = m.net.teacher_forced(&mut tape, e, &enc).unwrap();
        let want = tape.data(forced[0]).to_vec();
        let got = m
            .with_session(e, |s, _| {
                let init = s.initial.clone();
                s.distribution(&init, START).unwrap().1
            })
            .unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn inference_respects_limits_and_is_deterministic() {
        let (m, ex) = tiny();
        for e in &ex {
            let a = m.infer(e, 4).unwrap();
            let b = m.infer(e, 4).unwrap();
            assert_eq!(a.tokens, b.tokens);
            assert!(a.tokens.len() >= m.config.min_decode && a.tokens.len() <= m.config.max_decode);
            assert_eq!(a.scores.len(), e.candidates());
            let att = a.attention.unwrap();
            assert_eq!(att.shape(), &[e.article_ids.len(), e.candidates().div_ceil(2)]);
        }
    }
}
