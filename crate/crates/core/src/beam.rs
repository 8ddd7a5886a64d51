//! Beam search and greedy decoding over any step-wise scorer.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::Float;

/// A decoder that can be advanced one token at a time.
pub trait StepModel {
    type State: Clone;

    /// Log-probabilities of every next token after feeding `token` in `state`.
    fn step(&mut self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<Float>)>;
}

#[derive(Clone, Copy, Debug)]
pub struct DecodeLimits {
    pub start: usize,
    pub eos: usize,
    /// EOS is masked until this many tokens have been produced.
    pub min_len: usize,
    /// Hard cap on produced tokens, EOS included.
    pub max_len: usize,
}

impl DecodeLimits {
    fn check(&self) -> Result<()> {
        if self.max_len == 0 || self.min_len > self.max_len {
            return Err(Error::Input(format!(
                "decode limits need 0 < max_len and min_len <= max_len (got {} / {})",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Produced tokens; ends with EOS when `finished`.
    pub tokens: Vec<usize>,
    pub log_prob: Float,
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability per produced token.
    pub fn avg_log_prob(&self) -> Float {
        self.log_prob / self.tokens.len().max(1) as Float
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[usize] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

fn masked(mut log_probs: Vec<Float>, produced: usize, limits: &DecodeLimits) -> Vec<Float> {
    if produced < limits.min_len {
        if let Some(p) = log_probs.get_mut(limits.eos) {
            *p = Float::NEG_INFINITY;
        }
    }
    log_probs
}

/// Indices of the `k` largest entries, ties to the lower index.
fn top_k(values: &[Float], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i] > Float::NEG_INFINITY).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn greedy<M: StepModel>(model: &mut M, init: M::State, limits: DecodeLimits) -> Result<Hypothesis> {
    limits.check()?;
    let mut state = init;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    let mut input = limits.start;
    while hyp.tokens.len() < limits.max_len {
        let (next, lp) = model.step(&state, input)?;
        let lp = masked(lp, hyp.tokens.len(), &limits);
        let Some(&best) = top_k(&lp, 1).first() else {
            return Err(Error::Input("step model produced no finite log-probability".into()));
        };
        hyp.tokens.push(best);
        hyp.log_prob += lp[best];
        if best == limits.eos {
            hyp.finished = true;
            break;
        }
        state = next;
        input = best;
    }
    Ok(hyp)
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
}

/// Keeps `beam_size` live hypotheses, expanding each by its `2 · beam_size`
/// best tokens. Finished hypotheses are collected until `beam_size` of them
/// exist or `max_len` tokens have been produced; the result is the one with
/// the best per-token log-probability.
pub fn beam_search<M: StepModel>(
    model: &mut M,
    init: M::State,
    beam_size: usize,
    limits: DecodeLimits,
) -> Result<Hypothesis> {
    limits.check()?;
    if beam_size == 0 {
        return Err(Error::Input("beam size must be positive".into()));
    }
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state: init,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..limits.max_len {
        let mut expanded = Vec::new();
        for l in &live {
            let input = l.hyp.tokens.last().copied().unwrap_or(limits.start);
            let (next, lp) = model.step(&l.state, input)?;
            let lp = masked(lp, l.hyp.tokens.len(), &limits);
            for w in top_k(&lp, 2 * beam_size) {
                let mut tokens = l.hyp.tokens.clone();
                tokens.push(w);
                expanded.push(Live {
                    hyp: Hypothesis {
                        tokens,
                        log_prob: l.hyp.log_prob + lp[w],
                        finished: w == limits.eos,
                    },
                    state: next.clone(),
                });
            }
        }
        expanded.sort_by(|a, b| b.hyp.log_prob.partial_cmp(&a.hyp.log_prob).unwrap_or(Ordering::Equal));
        live = Vec::new();
        for c in expanded {
            if c.hyp.finished {
                done.push(c.hyp);
            } else {
                live.push(c);
            }
            if live.len() == beam_size || done.len() == beam_size {
                break;
            }
        }
        if done.len() >= beam_size || live.is_empty() {
            break;
        }
    }
    if done.is_empty() {
        done = live.into_iter().map(|l| l.hyp).collect();
    }
    let mut best: Option<Hypothesis> = None;
    for h in done {
        if best.as_ref().is_none_or(|b| h.avg_log_prob() > b.avg_log_prob()) {
            best = Some(h);
        }
    }
    best.ok_or_else(|| Error::Input("beam search produced no hypothesis".into()))
}
