//! Full-length ROUGE F1 and cover ranking metrics.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

pub use crate::data::cosine_similarity;
use crate::error::{Error, Result};
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, cand: usize, reference: usize) -> Self {
        let p = if cand == 0 { 0.0 } else { overlap as f64 / cand as f64 };
        let r = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        RougeScore {
            precision: p,
            recall: r,
            f1,
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let overlap = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    RougeScore::from_counts(overlap, c.values().sum(), r.values().sum())
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Candidate scores of one sample and the index of its single positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub scores: Vec<Float>,
    pub positive: usize,
}

impl Ranking {
    /// 1-based rank of the positive; equal scores are ordered by ascending index.
    pub fn rank(&self) -> Result<usize> {
        let Some(&sp) = self.scores.get(self.positive) else {
            return Err(Error::data(format!(
                "positive {} outside {} candidates",
                self.positive,
                self.scores.len()
            )));
        };
        Ok(1 + self
            .scores
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > sp || (s == sp && j < self.positive))
            .count())
    }
}

/// Mean of `1 / rank` over samples (average precision with one relevant item).
pub fn map_score(rankings: &[Ranking]) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::data("no rankings to score"));
    }
    let mut total = 0.0;
    for r in rankings {
        total += 1.0 / r.rank()? as f64;
    }
    Ok(total / rankings.len() as f64)
}

/// Fraction of samples whose positive is among the top `k` of exactly `n` candidates.
pub fn recall_at_k(rankings: &[Ranking], n: usize, k: usize) -> Result<f64> {
    if k > n {
        return Err(Error::Input(format!("R_n@k needs k <= n, got n={n}, k={k}")));
    }
    if rankings.is_empty() {
        return Err(Error::data("no rankings to score"));
    }
    let mut hits = 0;
    for r in rankings {
        if r.scores.len() != n {
            return Err(Error::data(format!("expected {n} candidates, found {}", r.scores.len())));
        }
        if r.rank()? <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

/// Fraction of samples whose positive ranks within the top `k`, whatever their candidate count.
pub fn hit_rate(rankings: &[Ranking], k: usize) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::data("no rankings to score"));
    }
    let mut hits = 0;
    for r in rankings {
        if r.rank()? <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

/// Corpus-level metrics in the shape emitted by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub map: f64,
    pub r_at_k: BTreeMap<String, f64>,
}

pub const REPORT_KS: [usize; 3] = [1, 2, 5];

impl EvalReport {
    /// Averages per-sample F1 scores and ranks. `pairs` holds (candidate, reference) summaries.
    pub fn compute(pairs: &[(Vec<String>, Vec<String>)], rankings: &[Ranking]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::data("nothing to evaluate"));
        }
        let mean = |f: &dyn Fn(&[String], &[String]) -> f64| {
            pairs.iter().map(|(c, r)| f(c, r)).sum::<f64>() / pairs.len() as f64
        };
        let mut r_at_k = BTreeMap::new();
        for k in REPORT_KS {
            r_at_k.insert(k.to_string(), hit_rate(rankings, k)?);
        }
        Ok(EvalReport {
            rouge1: mean(&|c, r| rouge_n(c, r, 1).f1),
            rouge2: mean(&|c, r| rouge_n(c, r, 2).f1),
            rouge_l: mean(&|c, r| rouge_l(c, r).f1),
            map: map_score(rankings)?,
            r_at_k,
        })
    }

    /// Element-wise mean of several reports.
    pub fn average(reports: &[EvalReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Input("no reports to average".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mut r_at_k = BTreeMap::new();
        for k in reports[0].r_at_k.keys() {
            r_at_k.insert(k.clone(), avg(&|r| r.r_at_k.get(k).copied().unwrap_or(0.0)));
        }
        Ok(EvalReport {
            rouge1: avg(&|r| r.rouge1),
            rouge2: avg(&|r| r.rouge2),
            rouge_l: avg(&|r| r.rouge_l),
            map: avg(&|r| r.map),
            r_at_k,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn rouge_worked_cases() {
        let same = rouge_n(&toks("a b c"), &toks("a b c"), 1);
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        assert_eq!(rouge_n(&toks("a b"), &toks("c d"), 1).f1, 0.0);
        let r1 = rouge_n(&toks("a b c"), &toks("a c d"), 1);
        assert!((r1.precision - 2.0 / 3.0).abs() < 1e-15 && (r1.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r1.f1 - 2.0 / 3.0).abs() < 1e-15);
        let l = rouge_l(&toks("a b c d"), &toks("a c b d"));
        assert_eq!((l.precision, l.recall), (0.75, 0.75));
        let pre = rouge_l(&toks("a b c d"), &toks("a b"));
        assert_eq!((pre.recall, pre.precision), (1.0, 0.5));
        assert_eq!(rouge_l::<&str>(&[], &toks("a")).f1, 0.0);
        assert_eq!(rouge_n(&toks("a"), &toks("a"), 2), RougeScore::default());
    }

    #[test]
    fn clipping_limits_repeated_ngrams() {
        let r = rouge_n(&toks("the the the"), &toks("the cat"), 1);
        assert!((r.precision - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ranking_worked_cases() {
        let first = Ranking { scores: vec![0.9, 0.1, 0.2], positive: 0 };
        assert_eq!(map_score(&[first.clone(), first.clone()]).unwrap(), 1.0);
        let mut s = vec![0.0; 10];
        s[4] = 0.8;
        s[7] = 0.9;
        let second = Ranking { scores: s, positive: 4 };
        assert_eq!(map_score(&[second.clone()]).unwrap(), 0.5);
        assert_eq!(recall_at_k(&[second.clone()], 10, 10).unwrap(), 1.0);
        let last = Ranking { scores: (0..10).map(|i| -(i as f64)).collect(), positive: 9 };
        for k in 1..10 {
            assert_eq!(recall_at_k(&[last.clone()], 10, k).unwrap(), 0.0);
        }
        assert!(recall_at_k(&[last.clone()], 10, 11).is_err());
        assert!(map_score(&[Ranking { scores: vec![1.0], positive: 3 }]).is_err());
        // Ties rank the lower index first.
        assert_eq!(Ranking { scores: vec![0.5; 4], positive: 2 }.rank().unwrap(), 3);
    }

    proptest! {
        #[test]
        fn rouge_swaps_precision_and_recall(a in prop::collection::vec(0u8..5, 0..12), b in prop::collection::vec(0u8..5, 0..12)) {
            for (x, y) in [(rouge_n(&a, &b, 1), rouge_n(&b, &a, 1)), (rouge_n(&a, &b, 2), rouge_n(&b, &a, 2)), (rouge_l(&a, &b), rouge_l(&b, &a))] {
                prop_assert_eq!(x.precision, y.recall);
                prop_assert_eq!(x.recall, y.precision);
                prop_assert!((x.f1 - y.f1).abs() < 1e-15);
                for v in [x.precision, x.recall, x.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn recall_is_monotone_and_map_is_mrr(seed in prop::collection::vec((prop::collection::vec(0u8..4, 6), 0usize..6), 1..8)) {
            let rankings: Vec<Ranking> = seed
                .into_iter()
                .map(|(s, p)| Ranking { scores: s.into_iter().map(|v| v as f64).collect(), positive: p })
                .collect();
            let mut prev = 0.0;
            for k in 1..=6 {
                let r = recall_at_k(&rankings, 6, k).unwrap();
                prop_assert!(r >= prev);
                prev = r;
            }
            let mrr = rankings.iter().map(|r| 1.0 / r.rank().unwrap() as f64).sum::<f64>() / rankings.len() as f64;
            prop_assert_eq!(map_score(&rankings).unwrap(), mrr);
        }
    }

    #[test]
    fn report_averages() {
        let pairs = vec![(vec!["a".to_string()], vec!["a".to_string()])];
        let rk = vec![Ranking { scores: vec![0.1, 0.2], positive: 0 }];
        let r = EvalReport::compute(&pairs, &rk).unwrap();
        assert_eq!((r.rouge1, r.map, r.r_at_k["1"], r.r_at_k["2"]), (1.0, 0.5, 0.0, 1.0));
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("rougeL").is_some() && json["r_at_k"].get("5").is_some());
        let avg = EvalReport::average(&[r.clone(), EvalReport { map: 1.0, ..r.clone() }]).unwrap();
        assert_eq!(avg.map, 0.75);
    }
}
