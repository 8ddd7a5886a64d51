//! Decoding a dataset and scoring it.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Example;
use crate::error::Result;
use crate::metrics::{rouge_l, rouge_n, EvalReport, Ranking};
use crate::model::Dims;
use crate::tensor::Float;

/// Per-sample detail written next to the corpus metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleOutput {
    pub id: String,
    pub summary: String,
    pub reference: String,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub cover: usize,
    pub positive: usize,
    pub rank: usize,
    pub scores: Vec<Float>,
}

/// Decodes every example with `beam` and scores summaries and cover rankings.
pub fn evaluate(model: &Dims, examples: &[Example], beam: usize) -> Result<(EvalReport, Vec<SampleOutput>)> {
    let outputs = examples
        .par_iter()
        .map(|ex| {
            let inf = model.infer(ex, beam)?;
            let ranking = Ranking {
                scores: inf.scores.clone(),
                positive: ex.positive,
            };
            let out = SampleOutput {
                id: ex.id.clone(),
                summary: inf.summary.join(" "),
                reference: ex.reference.join(" "),
                rouge1: rouge_n(&inf.summary, &ex.reference, 1).f1,
                rouge2: rouge_n(&inf.summary, &ex.reference, 2).f1,
                rouge_l: rouge_l(&inf.summary, &ex.reference).f1,
                cover: inf.cover,
                positive: ex.positive,
                rank: ranking.rank()?,
                scores: inf.scores,
            };
            Ok((out, inf.summary, ranking))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(Vec<String>, Vec<String>)> = outputs
        .iter()
        .zip(examples)
        .map(|((_, s, _), ex)| (s.clone(), ex.reference.clone()))
        .collect();
    let rankings: Vec<Ranking> = outputs.iter().map(|(_, _, r)| r.clone()).collect();
    let report = EvalReport::compute(&pairs, &rankings)?;
    Ok((report, outputs.into_iter().map(|(o, _, _)| o).collect()))
}

/// Cover rankings only, skipping summary decoding.
pub fn rankings(model: &Dims, examples: &[Example]) -> Result<Vec<Ranking>> {
    examples
        .par_iter()
        .map(|ex| {
            Ok(Ranking {
                scores: model.cover_scores(ex)?,
                positive: ex.positive,
            })
        })
        .collect()
}

/// Mean teacher-forced `L_seq` per target token.
pub fn per_token_seq_loss(model: &Dims, examples: &[Example]) -> Result<Float> {
    let per: Vec<(Float, usize)> = examples
        .par_iter()
        .map(|ex| Ok((model.loss_values(ex)?.seq, ex.targets.len())))
        .collect::<Result<_>>()?;
    let (loss, tokens) = per.iter().fold((0.0, 0), |(l, t), (a, b)| (l + a, t + b));
    Ok(loss / tokens.max(1) as Float)
}
