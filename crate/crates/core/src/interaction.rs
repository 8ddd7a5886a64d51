//! Video/article interaction: conditional self-attention over segment
//! summaries and two-way global attention between tokens and segments.

use crate::config::{AttentionNormalize, ScalePosition};
use crate::layers::{Init, Linear};
use crate::tensor::{Float, ParamId, Result, Tape, Tensor, Var};

/// One self-attention layer over segment summaries, followed by the
/// residual/layer-norm/feed-forward sublayers.
pub struct SelfAttentionLayer {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub norm1: (ParamId, ParamId),
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: (ParamId, ParamId),
    pub dim: usize,
    pub scale: ScalePosition,
    pub eps: Float,
}

impl SelfAttentionLayer {
    pub fn new(
        init: &mut Init,
        name: &str,
        dim: usize,
        ffn_dim: usize,
        scale: ScalePosition,
        eps: Float,
    ) -> Result<Self> {
        Ok(SelfAttentionLayer {
            q: Linear::new(init, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(init, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(init, &format!("{name}.v"), dim, dim)?,
            norm1: (
                init.constant(&format!("{name}.norm1.gain"), &[dim], 1.0)?,
                init.constant(&format!("{name}.norm1.bias"), &[dim], 0.0)?,
            ),
            ff1: Linear::new(init, &format!("{name}.ff1"), dim, ffn_dim)?,
            ff2: Linear::new(init, &format!("{name}.ff2"), ffn_dim, dim)?,
            norm2: (
                init.constant(&format!("{name}.norm2.gain"), &[dim], 1.0)?,
                init.constant(&format!("{name}.norm2.bias"), &[dim], 0.0)?,
            ),
            dim,
            scale,
            eps,
        })
    }

    /// Attention sublayer only: returns the attended values and the weights `α`.
    pub fn attend(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let q = self.q.forward(tape, x)?;
        let k = self.k.forward(tape, x)?;
        let v = self.v.forward(tape, x)?;
        attend_qkv(tape, q, k, v, self.dim, self.scale)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (attended, _) = self.attend(tape, x)?;
        let res = tape.add(x, attended)?;
        let (g1, b1) = (tape.param(self.norm1.0), tape.param(self.norm1.1));
        let a = tape.layer_norm(res, g1, b1, self.eps)?;
        let hidden = self.ff1.forward(tape, a)?;
        let hidden = tape.relu(hidden)?;
        let ff = self.ff2.forward(tape, hidden)?;
        let res = tape.add(a, ff)?;
        let (g2, b2) = (tape.param(self.norm2.0), tape.param(self.norm2.1));
        tape.layer_norm(res, g2, b2, self.eps)
    }
}

/// `α = softmax_j(Q_i·K_j)`, output `Σ_j α_ij V_j / √d`, with `√d` placed per `scale`.
pub fn attend_qkv(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    dim: usize,
    scale: ScalePosition,
) -> Result<(Var, Var)> {
    let inv_sqrt = 1.0 / (dim as Float).sqrt();
    let kt = tape.transpose(k)?;
    let mut logits = tape.matmul(q, kt)?;
    if scale == ScalePosition::Logits {
        logits = tape.scale(logits, inv_sqrt)?;
    }
    let alpha = tape.softmax(logits, 1)?;
    let mut out = tape.matmul(alpha, v)?;
    if scale == ScalePosition::Values {
        out = tape.scale(out, inv_sqrt)?;
    }
    Ok((out, alpha))
}

/// Multiplies row `i` of `x` (`n × d`) by `weights[i]` (`n × 1`).
pub fn scale_rows(tape: &mut Tape, weights: Var, x: Var) -> Result<Var> {
    let d = tape.shape(x)[1];
    let ones = tape.constant(Tensor::filled(vec![1, d], 1.0));
    let spread = tape.matmul(weights, ones)?;
    tape.mul(spread, x)
}

/// Stack of self-attention layers whose output is gated by article relevance.
pub struct ConditionalSelfAttention {
    pub layers: Vec<SelfAttentionLayer>,
    /// `F_s`: `d → 1`.
    pub gate: Linear,
}

impl ConditionalSelfAttention {
    pub fn new(
        init: &mut Init,
        dim: usize,
        layers: usize,
        ffn_dim: usize,
        scale: ScalePosition,
        eps: Float,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| SelfAttentionLayer::new(init, &format!("cond_attn.{l}"), dim, ffn_dim, scale, eps))
            .collect::<Result<_>>()?;
        Ok(ConditionalSelfAttention {
            layers,
            gate: Linear::new(init, "cond_gate", dim, 1)?,
        })
    }

    /// `β_i = σ(F_s(S_i ⊙ h))` for every segment summary `S_i`; `T_s × 1`.
    pub fn condition_gate(&self, tape: &mut Tape, summaries: Var, article_final: Var) -> Result<Var> {
        let pre = self.gate_logits(tape, summaries, article_final)?;
        tape.sigmoid(pre)
    }

    /// The argument of the gate's sigmoid.
    pub fn gate_logits(&self, tape: &mut Tape, summaries: Var, article_final: Var) -> Result<Var> {
        let n = tape.shape(summaries)[0];
        let cond = tape.repeat_rows(article_final, n)?;
        let prod = tape.mul(summaries, cond)?;
        self.gate.forward(tape, prod)
    }

    /// Returns `(S^c, β)` where `S^c_i = β_i · stack(S)_i`.
    pub fn forward(&self, tape: &mut Tape, summaries: Var, article_final: Var) -> Result<(Var, Var)> {
        let mut x = summaries;
        for layer in &self.layers {
            x = layer.forward(tape, x)?;
        }
        let beta = self.condition_gate(tape, summaries, article_final)?;
        let gated = scale_rows(tape, beta, x)?;
        Ok((gated, beta))
    }
}

/// Two-way attention between article tokens and video segments.
pub struct GlobalAttention {
    pub f_h: Linear,
    pub f_t: Linear,
    pub normalize: AttentionNormalize,
}

pub struct GlobalAttentionOutput {
    /// `T_d × T_s` raw scores `E`.
    pub scores: Var,
    /// `T_d × d` video-aware article states.
    pub article: Var,
    /// `T_s × d` article-aware segment states.
    pub video: Var,
    /// Row-normalized weights used for `article` (`None` in raw mode).
    pub row_weights: Option<Var>,
    /// Column-normalized weights used for `video` (`None` in raw mode).
    pub col_weights: Option<Var>,
}

impl GlobalAttention {
    pub fn new(init: &mut Init, dim: usize, normalize: AttentionNormalize) -> Result<Self> {
        Ok(GlobalAttention {
            f_h: Linear::new(init, "global.f_h", dim, dim)?,
            f_t: Linear::new(init, "global.f_t", dim, dim)?,
            normalize,
        })
    }

    pub fn forward(&self, tape: &mut Tape, article: Var, summaries: Var) -> Result<GlobalAttentionOutput> {
        let ph = self.f_h.forward(tape, article)?;
        let pt = self.f_t.forward(tape, summaries)?;
        let ptt = tape.transpose(pt)?;
        let scores = tape.matmul(ph, ptt)?;
        let (row_w, col_w) = match self.normalize {
            AttentionNormalize::Softmax => {
                let r = tape.softmax(scores, 1)?;
                let c = tape.softmax(scores, 0)?;
                (r, c)
            }
            AttentionNormalize::Raw => (scores, scores),
        };
        let video_aware = tape.matmul(row_w, summaries)?;
        let col_t = tape.transpose(col_w)?;
        let article_aware = tape.matmul(col_t, article)?;
        let normalized = self.normalize == AttentionNormalize::Softmax;
        Ok(GlobalAttentionOutput {
            scores,
            article: video_aware,
            video: article_aware,
            row_weights: normalized.then_some(row_w),
            col_weights: normalized.then_some(col_w),
        })
    }
}

/// Fused representations handed to the generators.
pub struct InteractionOutput {
    /// `T_s × d` conditional segments `S^c`.
    pub conditional: Var,
    /// `T_s × 1` gates, absent when conditional self-attention is disabled.
    pub beta: Option<Var>,
    /// `T_d × T_s` scores, absent when global attention is disabled.
    pub scores: Option<Var>,
    /// `T_d × d` video-aware article `ĥ^x`.
    pub article: Var,
    /// `T_s × d` article-aware video `Ŝ^c`.
    pub video: Var,
    pub row_weights: Option<Var>,
    pub col_weights: Option<Var>,
}

pub struct DualInteraction {
    pub conditional: Option<ConditionalSelfAttention>,
    pub global: Option<GlobalAttention>,
}

impl DualInteraction {
    pub fn forward(
        &self,
        tape: &mut Tape,
        article: Var,
        article_final: Var,
        summaries: Var,
    ) -> Result<InteractionOutput> {
        let (conditional, beta) = match &self.conditional {
            Some(c) => {
                let (s, b) = c.forward(tape, summaries, article_final)?;
                (s, Some(b))
            }
            None => (summaries, None),
        };
        Ok(match &self.global {
            Some(g) => {
                let out = g.forward(tape, article, summaries)?;
                InteractionOutput {
                    conditional,
                    beta,
                    scores: Some(out.scores),
                    article: out.article,
                    video: out.video,
                    row_weights: out.row_weights,
                    col_weights: out.col_weights,
                }
            }
            None => InteractionOutput {
                conditional,
                beta,
                scores: None,
                article,
                video: conditional,
                row_weights: None,
                col_weights: None,
            },
        })
    }
}
