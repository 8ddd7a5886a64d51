//! Summary decoder with editing gate, attention and pointer/copy, plus the
//! cover-frame scorer.

use crate::config::EditingGate;
use crate::error::{Error, Result};
use crate::layers::{Init, Linear, LstmCell};
use crate::tensor::{Float, ParamId, Tape, Var};

/// Recurrent decoder state: LSTM hidden `d_t`, cell, and the previous context `h^c_{t-1}`.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub hidden: Var,
    pub cell: Var,
    pub context: Var,
}

/// Encoder-side inputs the decoder reads at every step.
#[derive(Clone, Debug)]
pub struct DecoderMemory {
    /// `T_d × d` article states `h^x`.
    pub article: Var,
    /// `T_d × d` video-aware article states `ĥ^x`.
    pub video_aware: Var,
    /// Extended-vocabulary id of every encoded source token.
    pub source_ext_ids: Vec<usize>,
    /// Number of source OOV slots appended after the fixed vocabulary.
    pub oov_count: usize,
}

pub struct StepOutput {
    pub state: DecoderState,
    /// `1 × T_d` attention `δ_t`.
    pub attention: Var,
    /// `1 × V` generation distribution `P_v`.
    pub vocab_dist: Var,
    /// `1 × 1` generation probability.
    pub p_gen: Var,
    /// `1 × (V + oov)` extended distribution.
    pub final_dist: Var,
}

pub struct Decoder {
    pub embedding: ParamId,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub init: Linear,
    pub rnn: LstmCell,
    /// `F_d`: `d → 1` (scalar gate) or `d → d` (vector gate).
    pub editing: Linear,
    pub editing_mode: EditingGate,
    pub attn_w_g: ParamId,
    pub attn_w_s: ParamId,
    pub attn_b: ParamId,
    pub attn_v: ParamId,
    /// `F_p`: `2d → d`.
    pub out_hidden: Linear,
    /// `F_o`: `d → V`.
    pub out_vocab: Linear,
    /// Generation switch over `[h^c; d; e]`.
    pub pointer: Linear,
}

impl Decoder {
    pub fn new(
        init: &mut Init,
        embedding: ParamId,
        embed_dim: usize,
        hidden_dim: usize,
        vocab_size: usize,
        editing_mode: EditingGate,
    ) -> Result<Self> {
        let d = hidden_dim;
        let gate_out = match editing_mode {
            EditingGate::Scalar => 1,
            EditingGate::Vector => d,
        };
        Ok(Decoder {
            embedding,
            embed_dim,
            hidden_dim,
            vocab_size,
            init: Linear::new(init, "decoder.init", d, d)?,
            rnn: LstmCell::new(init, "decoder.rnn", embed_dim + d, d)?,
            editing: Linear::new(init, "editing_gate", d, gate_out)?,
            editing_mode,
            attn_w_g: init.normal("dec_attn.w_g", &[d, d])?,
            attn_w_s: init.normal("dec_attn.w_s", &[d, d])?,
            attn_b: init.normal("dec_attn.b", &[1, d])?,
            attn_v: init.normal("dec_attn.v", &[d, 1])?,
            out_hidden: Linear::new(init, "out_hidden", 2 * d, d)?,
            out_vocab: Linear::new(init, "out_vocab", d, vocab_size)?,
            pointer: Linear::new(init, "pointer", 2 * d + embed_dim, 1)?,
        })
    }

    /// `d_0 = tanh(W h_final + b)`, zero cell and zero context.
    pub fn initial_state(&self, tape: &mut Tape, article_final: Var) -> Result<DecoderState> {
        let pre = self.init.forward(tape, article_final)?;
        Ok(DecoderState {
            hidden: tape.tanh(pre)?,
            cell: tape.zeros(&[1, self.hidden_dim]),
            context: tape.zeros(&[1, self.hidden_dim]),
        })
    }

    /// `g = γ_e h^x + (1 − γ_e) ĥ^x` with `γ_e = σ(F_d(d_t))`.
    pub fn edit(&self, tape: &mut Tape, hidden: Var, memory: &DecoderMemory) -> Result<Var> {
        let pre = self.editing.forward(tape, hidden)?;
        let gamma = tape.sigmoid(pre)?;
        let rest = tape.one_minus(gamma)?;
        Ok(match self.editing_mode {
            EditingGate::Scalar => {
                let a = tape.mul(gamma, memory.article)?;
                let b = tape.mul(rest, memory.video_aware)?;
                tape.add(a, b)?
            }
            EditingGate::Vector => {
                let n = tape.shape(memory.article)[0];
                let gamma = tape.repeat_rows(gamma, n)?;
                let rest = tape.repeat_rows(rest, n)?;
                let a = tape.mul(gamma, memory.article)?;
                let b = tape.mul(rest, memory.video_aware)?;
                tape.add(a, b)?
            }
        })
    }

    /// `δ = softmax_i(vᵀ tanh(W_g g_i + W_s d + b))` as a `1 × T_d` row.
    pub fn attend(&self, tape: &mut Tape, edited: Var, hidden: Var) -> Result<Var> {
        let n = tape.shape(edited)[0];
        let (w_g, w_s, b, v) = (
            tape.param(self.attn_w_g),
            tape.param(self.attn_w_s),
            tape.param(self.attn_b),
            tape.param(self.attn_v),
        );
        let keys = tape.matmul(edited, w_g)?;
        let query = tape.affine(hidden, w_s, b)?;
        let query = tape.repeat_rows(query, n)?;
        let pre = tape.add(keys, query)?;
        let act = tape.tanh(pre)?;
        let scores = tape.matmul(act, v)?;
        let scores = tape.reshape(scores, &[1, n])?;
        Ok(tape.softmax(scores, 1)?)
    }

    /// One decoding step fed with the fixed-vocabulary id of the previous token.
    pub fn step(
        &self,
        tape: &mut Tape,
        state: DecoderState,
        prev_token: usize,
        memory: &DecoderMemory,
    ) -> Result<StepOutput> {
        if prev_token >= self.vocab_size {
            return Err(Error::Input(format!("decoder input {prev_token} outside the fixed vocabulary")));
        }
        let table = tape.param(self.embedding);
        let emb = tape.gather_rows(table, &[prev_token])?;
        let x = tape.concat(&[emb, state.context], 1)?;
        let x = self.rnn.project_inputs(tape, x)?;
        let (hidden, cell) = self.rnn.step(tape, x, state.hidden, state.cell)?;

        let edited = self.edit(tape, hidden, memory)?;
        let attention = self.attend(tape, edited, hidden)?;
        let context = tape.matmul(attention, edited)?;

        let joined = tape.concat(&[hidden, context], 1)?;
        let pre = self.out_hidden.forward(tape, joined)?;
        let readout = tape.sigmoid(pre)?;
        let logits = self.out_vocab.forward(tape, readout)?;
        let vocab_dist = tape.softmax(logits, 1)?;

        let switch_in = tape.concat(&[context, hidden, emb], 1)?;
        let pre = self.pointer.forward(tape, switch_in)?;
        let p_gen = tape.sigmoid(pre)?;
        let final_dist = pointer_mix(tape, vocab_dist, attention, p_gen, &memory.source_ext_ids, memory.oov_count)?;

        Ok(StepOutput {
            state: DecoderState { hidden, cell, context },
            attention,
            vocab_dist,
            p_gen,
            final_dist,
        })
    }
}

/// `p_gen · [P_v, 0…] + (1 − p_gen) · scatter(δ → source ids)` over `V + oov` slots.
pub fn pointer_mix(
    tape: &mut Tape,
    vocab_dist: Var,
    attention: Var,
    p_gen: Var,
    source_ext_ids: &[usize],
    oov_count: usize,
) -> Result<Var> {
    let v = tape.value(vocab_dist).numel();
    let total = v + oov_count;
    let gen = if oov_count > 0 {
        let pad = tape.zeros(&[1, oov_count]);
        tape.concat(&[vocab_dist, pad], 1)?
    } else {
        vocab_dist
    };
    let copy = tape.scatter_add(attention, source_ext_ids, total)?;
    let gen = tape.mul(p_gen, gen)?;
    let rest = tape.one_minus(p_gen)?;
    let copy = tape.mul(rest, copy)?;
    Ok(tape.add(gen, copy)?)
}

/// Scores every candidate frame from segment, article-aware segment and frame states.
pub struct CoverScorer {
    /// `F_m`: `d → 1`.
    pub f_m: Linear,
    /// `F_n`: `d → 1`.
    pub f_n: Linear,
    /// `F_c`: `d → 1`.
    pub f_c: Linear,
}

pub struct CoverScores {
    /// `n × 1` scores in `(0, 1)`.
    pub scores: Var,
    /// `n × d` fused candidate vectors.
    pub fused: Var,
    pub gamma1: Var,
    pub gamma2: Var,
}

impl CoverScorer {
    pub fn new(init: &mut Init, dim: usize) -> Result<Self> {
        Ok(CoverScorer {
            f_m: Linear::new(init, "fusion.f_m", dim, 1)?,
            f_n: Linear::new(init, "fusion.f_n", dim, 1)?,
            f_c: Linear::new(init, "cover.f_c", dim, 1)?,
        })
    }

    /// `frames` is `n × d` (`M`), `segment_of[j]` the segment holding candidate `j`.
    pub fn score(
        &self,
        tape: &mut Tape,
        frames: Var,
        conditional: Var,
        article_aware: Var,
        article_final: Var,
        segment_of: &[usize],
    ) -> Result<CoverScores> {
        let pre = self.f_m.forward(tape, article_final)?;
        let gamma1 = tape.sigmoid(pre)?;
        let pre = self.f_n.forward(tape, article_final)?;
        let gamma2 = tape.sigmoid(pre)?;
        let seg = tape.gather_rows(conditional, segment_of)?;
        let seg_aware = tape.gather_rows(article_aware, segment_of)?;
        let a = tape.mul(gamma1, seg)?;
        let b = tape.mul(gamma2, seg_aware)?;
        let both = tape.add(gamma1, gamma2)?;
        let rest = tape.one_minus(both)?;
        let c = tape.mul(rest, frames)?;
        let ab = tape.add(a, b)?;
        let fused = tape.add(ab, c)?;
        let pre = self.f_c.forward(tape, fused)?;
        let scores = tape.sigmoid(pre)?;
        Ok(CoverScores {
            scores,
            fused,
            gamma1,
            gamma2,
        })
    }
}

/// Index of the highest score; ties go to the lowest index.
pub fn select_cover(scores: &[Float]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Input("no cover candidates to select from".into()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// `Σ_neg max(0, y_neg − y_pos + margin)`, taking `scores` as an `n × 1` column.
pub fn hinge_loss(tape: &mut Tape, scores: Var, positive: usize, negatives: &[usize], margin: Float) -> Result<Var> {
    if negatives.is_empty() {
        return Ok(tape.zeros(&[1]));
    }
    let pos = tape.pick(scores, &[positive])?;
    let neg = tape.pick(scores, negatives)?;
    let diff = tape.sub(neg, pos)?;
    let diff = tape.shift(diff, margin)?;
    let hinge = tape.relu(diff)?;
    Ok(tape.sum(hinge)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::layers::tests::{lstm_step_oracle, sigmoid};
    use crate::tensor::{ParameterStore, Tensor};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn decoder(store: &mut ParameterStore, d: usize, v: usize, mode: EditingGate) -> Decoder {
        let mut init = Init::new(store, 31, 0.5);
        let emb = init.normal("embedding", &[v, 3]).unwrap();
        Decoder::new(&mut init, emb, 3, d, v, mode).unwrap()
    }

    fn memory(tape: &mut Tape, t: usize, d: usize, ext: Vec<usize>, oov: usize, seed: u64) -> DecoderMemory {
        let mut r = rng(seed);
        DecoderMemory {
            article: tape.constant(Tensor::randn(vec![t, d], 1.0, &mut r)),
            video_aware: tape.constant(Tensor::randn(vec![t, d], 1.0, &mut r)),
            source_ext_ids: ext,
            oov_count: oov,
        }
    }

    fn zero_linear(store: &mut ParameterStore, lin: &Linear) {
        for id in [lin.w, lin.b] {
            let n = store.get(id).numel();
            store.set_values(id, &vec![0.0; n]).unwrap();
        }
    }

    #[test]
    fn zero_editing_weights_average_the_two_views() {
        let mut store = ParameterStore::new();
        let dec = decoder(&mut store, 4, 9, EditingGate::Scalar);
        zero_linear(&mut store, &dec.editing);
        let mut tape = Tape::with_params(&store);
        let mem = memory(&mut tape, 3, 4, vec![4, 5, 6], 0, 1);
        let h = tape.constant(Tensor::randn(vec![1, 4], 1.0, &mut rng(2)));
        let g = dec.edit(&mut tape, h, &mem).unwrap();
        let (a, b) = (tape.data(mem.article), tape.data(mem.video_aware));
        for (i, gv) in tape.data(g).iter().enumerate() {
            assert!((gv - 0.5 * (a[i] + b[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_views_pass_through_the_gate() {
        for mode in [EditingGate::Scalar, EditingGate::Vector] {
            let mut store = ParameterStore::new();
            let dec = decoder(&mut store, 4, 9, mode);
            let mut tape = Tape::with_params(&store);
            let mut mem = memory(&mut tape, 3, 4, vec![4, 5, 6], 0, 3);
            mem.video_aware = mem.article;
            let h = tape.constant(Tensor::randn(vec![1, 4], 1.0, &mut rng(4)));
            let g = dec.edit(&mut tape, h, &mem).unwrap();
            for (gv, av) in tape.data(g).iter().zip(tape.data(mem.article)) {
                assert!((gv - av).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn editing_gate_two_dim_oracle() {
        let mut store = ParameterStore::new();
        let dec = decoder(&mut store, 2, 9, EditingGate::Scalar);
        store.set_values(dec.editing.w, &[0.4, -0.9]).unwrap();
        store.set_values(dec.editing.b, &[0.1]).unwrap();
        let d = [0.7, 0.2];
        let h = [[1.0, -2.0], [0.5, 0.25]];
        let hh = [[-1.0, 3.0], [2.0, 0.0]];
        let gamma = sigmoid(0.4 * d[0] - 0.9 * d[1] + 0.1);
        let mut tape = Tape::with_params(&store);
        let mem = DecoderMemory {
            article: tape.constant(Tensor::from_rows(&[h[0].to_vec(), h[1].to_vec()]).unwrap()),
            video_aware: tape.constant(Tensor::from_rows(&[hh[0].to_vec(), hh[1].to_vec()]).unwrap()),
            source_ext_ids: vec![4, 5],
            oov_count: 0,
        };
        let dv = tape.constant(Tensor::row(d.to_vec()).unwrap());
        let g = dec.edit(&mut tape, dv, &mem).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = gamma * h[i][j] + (1.0 - gamma) * hh[i][j];
                assert!((tape.value(g).at(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_token_article_context_is_that_token() {
        let mut store = ParameterStore::new();
        let dec = decoder(&mut store, 4, 9, EditingGate::Scalar);
        let mut tape = Tape::with_params(&store);
        let mem = memory(&mut tape, 1, 4, vec![5], 0, 5);
        let h0 = tape.constant(Tensor::randn(vec![1, 4], 1.0, &mut rng(6)));
        let s = dec.initial_state(&mut tape, h0).unwrap();
        let out = dec.step(&mut tape, s, 2, &mem).unwrap();
        assert_eq!(tape.data(out.attention), &[1.0]);
        let g = dec.edit(&mut tape, out.state.hidden, &mem).unwrap();
        assert_eq!(tape.data(out.state.context), tape.data(g));
    }

    /// Full step recomputed with plain loops over the stored parameters.
    fn step_oracle(
        store: &ParameterStore,
        dec: &Decoder,
        h: &[Vec<f64>],
        hh: &[Vec<f64>],
        ext: &[usize],
        oov: usize,
        d_prev: &[f64],
        c_prev: &[f64],
        ctx_prev: &[f64],
        prev: usize,
    ) -> Vec<f64> {
        let d = dec.hidden_dim;
        let p = |id: ParamId| store.get(id).clone();
        let lin = |l: &Linear, x: &[f64]| -> Vec<f64> {
            let (w, b) = (p(l.w), p(l.b));
            (0..w.cols())
                .map(|j| b.data()[j] + x.iter().enumerate().map(|(i, xv)| xv * w.at(i, j)).sum::<f64>())
                .collect()
        };
        let emb = p(dec.embedding).row_slice(prev).to_vec();
        let x: Vec<f64> = emb.iter().chain(ctx_prev).copied().collect();
        let (dt, _) = lstm_step_oracle(&p(dec.rnn.w_x), &p(dec.rnn.w_h), &p(dec.rnn.b), &x, d_prev, c_prev);
        let gamma = sigmoid(lin(&dec.editing, &dt)[0]);
        let g: Vec<Vec<f64>> = h
            .iter()
            .zip(hh)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| gamma * x + (1.0 - gamma) * y).collect())
            .collect();
        let (wg, ws, ab, av) = (p(dec.attn_w_g), p(dec.attn_w_s), p(dec.attn_b), p(dec.attn_v));
        let e: Vec<f64> = g
            .iter()
            .map(|gi| {
                (0..d)
                    .map(|k| {
                        let mut z = ab.data()[k];
                        for j in 0..d {
                            z += gi[j] * wg.at(j, k) + dt[j] * ws.at(j, k);
                        }
                        z.tanh() * av.data()[k]
                    })
                    .sum()
            })
            .collect();
        let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = e.iter().map(|x| (x - m).exp()).sum();
        let delta: Vec<f64> = e.iter().map(|x| (x - m).exp() / z).collect();
        let ctx: Vec<f64> = (0..d).map(|k| (0..g.len()).map(|i| delta[i] * g[i][k]).sum()).collect();
        let joined: Vec<f64> = dt.iter().chain(&ctx).copied().collect();
        let dout: Vec<f64> = lin(&dec.out_hidden, &joined).into_iter().map(sigmoid).collect();
        let logits = lin(&dec.out_vocab, &dout);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|x| (x - m).exp()).sum();
        let pv: Vec<f64> = logits.iter().map(|x| (x - m).exp() / z).collect();
        let sw: Vec<f64> = ctx.iter().chain(&dt).chain(&emb).copied().collect();
        let pg = sigmoid(lin(&dec.pointer, &sw)[0]);
        let mut out = vec![0.0; pv.len() + oov];
        for (w, pw) in pv.iter().enumerate() {
            out[w] += pg * pw;
        }
        for (i, &id) in ext.iter().enumerate() {
            out[id] += (1.0 - pg) * delta[i];
        }
        out
    }

    #[test]
    fn decode_step_matches_scalar_oracle() {
        let mut store = ParameterStore::new();
        let dec = decoder(&mut store, 3, 7, EditingGate::Scalar);
        let mut r = rng(8);
        let h: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let hh: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ext = vec![7, 4];
        let mut tape = Tape::with_params(&store);
        let mem = DecoderMemory {
            article: tape.constant(Tensor::from_rows(&h).unwrap()),
            video_aware: tape.constant(Tensor::from_rows(&hh).unwrap()),
            source_ext_ids: ext.clone(),
            oov_count: 1,
        };
        let hf = tape.constant(Tensor::randn(vec![1, 3], 1.0, &mut r));
        let s0 = dec.initial_state(&mut tape, hf).unwrap();
        let out1 = dec.step(&mut tape, s0, 2, &mem).unwrap();
        let out2 = dec.step(&mut tape, out1.state, 5, &mem).unwrap();

        let d0 = tape.data(s0.hidden).to_vec();
        let want1 = step_oracle(&store, &dec, &h, &hh, &ext, 1, &d0, &[0.0; 3], &[0.0; 3], 2);
        for (g, w) in tape.data(out1.final_dist).iter().zip(&want1) {
            assert!((g - w).abs() < 1e-12);
        }
        let s1 = out1.state;
        let want2 = step_oracle(
            &store,
            &dec,
            &h,
            &hh,
            &ext,
            1,
            tape.data(s1.hidden),
            tape.data(s1.cell),
            tape.data(s1.context),
            5,
        );
        for (g, w) in tape.data(out2.final_dist).iter().zip(&want2) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn pointer_mix_degenerate_gates() {
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::row(vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let att = tape.constant(Tensor::row(vec![0.5, 0.25, 0.25]).unwrap());
        let one = tape.constant(Tensor::scalar(1.0));
        let zero = tape.constant(Tensor::scalar(0.0));
        let ids = [1, 4, 1];
        let out = pointer_mix(&mut tape, pv, att, one, &ids, 2).unwrap();
        assert_eq!(tape.data(out), &[0.1, 0.2, 0.3, 0.4, 0.0, 0.0]);
        let out = pointer_mix(&mut tape, pv, att, zero, &ids, 2).unwrap();
        assert_eq!(tape.data(out), &[0.0, 0.75, 0.0, 0.0, 0.25, 0.0]);
    }

    proptest! {
        #[test]
        fn pointer_mix_matches_scatter_and_sums_to_one(
            seed in any::<u64>(),
            v in 2usize..12,
            t in 1usize..10,
            oov in 0usize..4,
        ) {
            let mut r = rng(seed);
            let norm = |xs: Vec<f64>| { let s: f64 = xs.iter().sum(); xs.into_iter().map(|x| x / s).collect::<Vec<_>>() };
            let pv = norm((0..v).map(|_| r.random_range(0.01..1.0)).collect());
            let att = norm((0..t).map(|_| r.random_range(0.01..1.0)).collect());
            let ids: Vec<usize> = (0..t).map(|_| r.random_range(0..v + oov)).collect();
            let pg: f64 = r.random_range(0.0..1.0);
            let mut tape = Tape::new();
            let (pvv, attv, pgv) = (
                tape.constant(Tensor::row(pv.clone()).unwrap()),
                tape.constant(Tensor::row(att.clone()).unwrap()),
                tape.constant(Tensor::scalar(pg)),
            );
            let out = pointer_mix(&mut tape, pvv, attv, pgv, &ids, oov).unwrap();
            let got = tape.data(out);
            for w in 0..v + oov {
                let mut want = if w < v { pg * pv[w] } else { 0.0 };
                for i in 0..t {
                    if ids[i] == w {
                        want += (1.0 - pg) * att[i];
                    }
                }
                prop_assert!((got[w] - want).abs() < 1e-12);
            }
            prop_assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_fusion_weights_drop_the_frame_term() {
        let mut store = ParameterStore::new();
        let scorer = CoverScorer::new(&mut Init::new(&mut store, 9, 0.5), 3);
        let scorer = scorer.unwrap();
        zero_linear(&mut store, &scorer.f_m);
        zero_linear(&mut store, &scorer.f_n);
        let mut r = rng(10);
        let mut tape = Tape::with_params(&store);
        let m = tape.constant(Tensor::randn(vec![4, 3], 1.0, &mut r));
        let s = tape.constant(Tensor::randn(vec![2, 3], 1.0, &mut r));
        let sh = tape.constant(Tensor::randn(vec![2, 3], 1.0, &mut r));
        let h = tape.constant(Tensor::randn(vec![1, 3], 1.0, &mut r));
        let seg = [0, 0, 1, 1];
        let out = scorer.score(&mut tape, m, s, sh, h, &seg).unwrap();
        for (j, &i) in seg.iter().enumerate() {
            for k in 0..3 {
                let want = 0.5 * tape.value(s).at(i, k) + 0.5 * tape.value(sh).at(i, k);
                assert!((tape.value(out.fused).at(j, k) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_frames_in_a_segment_score_equally() {
        let mut store = ParameterStore::new();
        let scorer = CoverScorer::new(&mut Init::new(&mut store, 11, 0.5), 3).unwrap();
        let mut r = rng(12);
        let row = Tensor::randn(vec![3], 1.0, &mut r).into_data();
        let mut tape = Tape::with_params(&store);
        let m = tape.constant(Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap());
        let s = tape.constant(Tensor::randn(vec![1, 3], 1.0, &mut r));
        let sh = tape.constant(Tensor::randn(vec![1, 3], 1.0, &mut r));
        let h = tape.constant(Tensor::randn(vec![1, 3], 1.0, &mut r));
        let out = scorer.score(&mut tape, m, s, sh, h, &[0, 0, 0]).unwrap();
        let y = tape.data(out.scores);
        assert!(y[0] == y[1] && y[1] == y[2]);
        assert!(y.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn cover_score_two_frame_oracle() {
        let mut store = ParameterStore::new();
        let scorer = CoverScorer::new(&mut Init::new(&mut store, 13, 0.5), 2).unwrap();
        store.set_values(scorer.f_m.w, &[0.3, -0.2]).unwrap();
        store.set_values(scorer.f_m.b, &[0.05]).unwrap();
        store.set_values(scorer.f_n.w, &[-0.6, 0.8]).unwrap();
        store.set_values(scorer.f_n.b, &[0.0]).unwrap();
        store.set_values(scorer.f_c.w, &[1.1, -0.4]).unwrap();
        store.set_values(scorer.f_c.b, &[0.2]).unwrap();
        let (m, s, sh, h) = ([[0.5, -1.0], [2.0, 0.3]], [0.7, 0.1], [-0.2, 0.9], [1.0, 0.5]);
        let g1 = sigmoid(0.3 * h[0] - 0.2 * h[1] + 0.05);
        let g2 = sigmoid(-0.6 * h[0] + 0.8 * h[1]);
        let mut tape = Tape::with_params(&store);
        let mv = tape.constant(Tensor::from_rows(&[m[0].to_vec(), m[1].to_vec()]).unwrap());
        let sv = tape.constant(Tensor::row(s.to_vec()).unwrap());
        let shv = tape.constant(Tensor::row(sh.to_vec()).unwrap());
        let hv = tape.constant(Tensor::row(h.to_vec()).unwrap());
        let out = scorer.score(&mut tape, mv, sv, shv, hv, &[0, 0]).unwrap();
        for j in 0..2 {
            let p: Vec<f64> = (0..2).map(|k| g1 * s[k] + g2 * sh[k] + (1.0 - g1 - g2) * m[j][k]).collect();
            let want = sigmoid(1.1 * p[0] - 0.4 * p[1] + 0.2);
            assert!((tape.data(out.scores)[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn select_cover_rules() {
        assert_eq!(select_cover(&[0.9, 0.5, 0.1]).unwrap(), 0);
        assert_eq!(select_cover(&[0.3; 5]).unwrap(), 0);
        assert!(select_cover(&[]).is_err());
        let mut r = rng(14);
        for _ in 0..200 {
            let n = r.random_range(1..12);
            // Coarse values so ties are common.
            let s: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64 / 4.0).collect();
            let mut best = 0;
            for i in 0..n {
                if s[i] > s[best] {
                    best = i;
                }
            }
            assert_eq!(select_cover(&s).unwrap(), best);
        }
    }

    #[test]
    fn hinge_loss_cases() {
        let eval = |scores: Vec<f64>, pos: usize, negs: &[usize], margin: f64| {
            let mut tape = Tape::new();
            let n = scores.len();
            let s = tape.constant(Tensor::new(vec![n, 1], scores).unwrap());
            let l = hinge_loss(&mut tape, s, pos, negs, margin).unwrap();
            tape.data(l)[0]
        };
        assert_eq!(eval(vec![0.9, 0.2, 0.3], 0, &[1, 2], 0.1), 0.0);
        assert!((eval(vec![0.5, 0.5, 0.5], 0, &[1, 2], 0.1) - 0.2).abs() < 1e-15);
        let mut r = rng(15);
        let scores: Vec<f64> = (0..10).map(|_| r.random_range(0.0..1.0)).collect();
        let negs: Vec<usize> = (1..10).collect();
        let want: f64 = negs.iter().map(|&j| (scores[j] - scores[0] + 0.1).max(0.0)).sum();
        assert!((eval(scores, 0, &negs, 0.1) - want).abs() < 1e-14);
    }
}
