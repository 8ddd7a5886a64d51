//! Synthetic topic datasets that can only be solved by relating the article
//! to the frames.
//!
//! Every sample has a main topic. Its keyword opens the article and appears
//! `keyword_repeats` times in total; the summary is the `follow` tokens after
//! each occurrence. One candidate frame carries the topic's embedding (the
//! planted cover). Decoy topics appear once in the article and have frames in
//! other segments, so picking the cover requires knowing which topic the
//! article is about. The remaining frames are random clutter.
//!
//! With `cue = theme` the opening keyword is a generic marker shared by all
//! topics, and a topic shows only through how often its theme words occur:
//! the main theme `main_mentions` times, each decoy theme `decoy_mentions`
//! times. Which topic dominates is then a property of the whole article
//! rather than of any single token.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CoverTruth, FrameKind, FrameSet, Sample};
use crate::error::{Error, Result};

/// How an article reveals its topic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicCue {
    Keyword,
    Theme,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub seed: u64,
    pub topics: usize,
    /// Distinct filler words.
    pub filler_vocab: usize,
    pub article_min: usize,
    pub article_max: usize,
    pub keyword_repeats: usize,
    /// Summary tokens taken after each keyword occurrence.
    pub follow: usize,
    pub decoys: usize,
    pub feature_dim: usize,
    pub candidates: usize,
    pub segment_len: usize,
    /// Standard deviation of per-dimension Gaussian noise on topic frames.
    pub noise: f32,
    pub cue: TopicCue,
    /// Distinct theme words per topic (theme cue only).
    pub theme_words: usize,
    pub main_mentions: usize,
    pub decoy_mentions: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            samples: 100,
            seed: 7,
            topics: 8,
            filler_vocab: 40,
            article_min: 24,
            article_max: 36,
            keyword_repeats: 2,
            follow: 5,
            decoys: 2,
            feature_dim: 16,
            candidates: 10,
            segment_len: 5,
            noise: 0.0,
            cue: TopicCue::Keyword,
            theme_words: 4,
            main_mentions: 6,
            decoy_mentions: 3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.topics < self.decoys + 1 {
            return bad("topics", "need more topics than decoys");
        }
        if self.filler_vocab == 0 || self.feature_dim == 0 || self.segment_len == 0 {
            return bad("filler_vocab", "filler_vocab, feature_dim and segment_len must be positive");
        }
        if self.keyword_repeats == 0 || self.follow == 0 {
            return bad("follow", "keyword_repeats and follow must be positive");
        }
        if self.candidates < self.decoys + 1 {
            return bad("candidates", "need room for the cover and every decoy frame");
        }
        if self.cue == TopicCue::Theme && (self.theme_words == 0 || self.decoy_mentions >= self.main_mentions) {
            return bad("decoy_mentions", "theme cue needs theme words and fewer decoy than main mentions");
        }
        let needed = self.keyword_repeats * (self.follow + 1) + self.mentions();
        if self.article_min < needed || self.article_min > self.article_max {
            return bad("article_min", &format!("article_min must be in [{needed}, article_max]"));
        }
        if !(self.noise >= 0.0) {
            return bad("noise", "must be non-negative");
        }
        Ok(())
    }

    /// Article tokens outside the keyword blocks that carry a topic.
    fn mentions(&self) -> usize {
        match self.cue {
            TopicCue::Keyword => self.decoys,
            TopicCue::Theme => self.main_mentions + self.decoys * self.decoy_mentions,
        }
    }

    /// Unit-norm topic embeddings shared by every sample of the dataset.
    pub fn topic_embeddings(&self) -> Vec<Vec<f32>> {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.topics).map(|_| unit(&mut r, self.feature_dim)).collect()
    }
}

fn unit(r: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(r)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| (x / n) as f32).collect();
        }
    }
}

pub fn keyword(topic: usize) -> String {
    format!("k{topic}")
}

/// The marker opening every keyword block under the theme cue.
pub const MARKER: &str = "k";

pub fn theme_word(topic: usize, j: usize) -> String {
    format!("t{topic}_{j}")
}

/// The summary of an article: the `follow` tokens after each occurrence of its first token.
pub fn summary_rule(article: &[String], follow: usize) -> Vec<String> {
    let Some(key) = article.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, t) in article.iter().enumerate() {
        if t == key {
            out.extend(article.iter().skip(i + 1).take(follow).cloned());
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Unit {
    Block,
    Mention(usize),
    Filler,
}

fn build_sample(spec: &SyntheticSpec, topics: &[Vec<f32>], index: usize) -> Sample {
    let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
    r.set_stream(index as u64 + 1);
    let topic = r.random_range(0..spec.topics);
    let mut others: Vec<usize> = (0..spec.topics).filter(|&t| t != topic).collect();
    others.shuffle(&mut r);
    let decoys = &others[..spec.decoys];

    // Article layout: keyword blocks (keyword + follow filler) and topic
    // mentions scattered through filler, with the first block at position 0.
    let len = r.random_range(spec.article_min..=spec.article_max);
    let block = spec.follow + 1;
    let free = len - spec.keyword_repeats * block - spec.mentions();
    let mut units: Vec<Unit> = Vec::new();
    units.extend(std::iter::repeat_n(Unit::Block, spec.keyword_repeats - 1));
    match spec.cue {
        TopicCue::Keyword => units.extend(decoys.iter().map(|&d| Unit::Mention(d))),
        TopicCue::Theme => {
            units.extend(std::iter::repeat_n(Unit::Mention(topic), spec.main_mentions));
            for &d in decoys {
                units.extend(std::iter::repeat_n(Unit::Mention(d), spec.decoy_mentions));
            }
        }
    }
    units.extend(std::iter::repeat_n(Unit::Filler, free));
    units.shuffle(&mut r);
    units.insert(0, Unit::Block);
    let filler = |r: &mut ChaCha8Rng| format!("w{}", r.random_range(0..spec.filler_vocab));
    let mut article = Vec::with_capacity(len);
    for u in units {
        match u {
            Unit::Block => {
                article.push(match spec.cue {
                    TopicCue::Keyword => keyword(topic),
                    TopicCue::Theme => MARKER.to_string(),
                });
                for _ in 0..spec.follow {
                    article.push(filler(&mut r));
                }
            }
            Unit::Mention(t) => article.push(match spec.cue {
                TopicCue::Keyword => keyword(t),
                TopicCue::Theme => theme_word(t, r.random_range(0..spec.theme_words)),
            }),
            Unit::Filler => article.push(filler(&mut r)),
        }
    }
    let summary = summary_rule(&article, spec.follow);

    let n = spec.candidates;
    let cover = r.random_range(0..n);
    let seg = |i: usize| i / spec.segment_len;
    let mut slots: Vec<usize> = (0..n).filter(|&i| i != cover && seg(i) != seg(cover)).collect();
    if slots.len() < spec.decoys {
        slots = (0..n).filter(|&i| i != cover).collect();
    }
    slots.shuffle(&mut r);
    let noisy = |r: &mut ChaCha8Rng, base: &[f32]| -> Vec<f32> {
        base.iter()
            .map(|v| v + spec.noise * <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut *r))
            .collect()
    };
    let mut frames: Vec<Vec<f32>> = (0..n).map(|_| unit(&mut r, spec.feature_dim)).collect();
    frames[cover] = noisy(&mut r, &topics[topic]);
    for (&slot, &d) in slots.iter().zip(decoys) {
        frames[slot] = noisy(&mut r, &topics[d]);
    }
    Sample {
        id: format!("syn-{index:06}"),
        article,
        summary,
        frames: FrameSet {
            kind: FrameKind::Feat,
            frame_shape: vec![spec.feature_dim],
            frames,
        },
        cover: CoverTruth::Frame(topics[topic].clone()),
    }
}

/// Generates `spec.samples` samples; fully determined by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let topics = spec.topic_embeddings();
    Ok((0..spec.samples).into_par_iter().map(|i| build_sample(spec, &topics, i)).collect())
}

/// Index of the planted cover, recovered from the clean topic embedding.
pub fn planted_cover(sample: &Sample) -> Option<usize> {
    let CoverTruth::Frame(truth) = &sample.cover else {
        return None;
    };
    sample.frames.frames.iter().position(|f| f == truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::label_positive;

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec {
            samples: 50,
            noise: 0.3,
            ..Default::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SyntheticSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn noiseless_cover_is_the_unique_argmax() {
        let spec = SyntheticSpec {
            samples: 200,
            ..Default::default()
        };
        for s in generate(&spec).unwrap() {
            s.validate().unwrap();
            let CoverTruth::Frame(truth) = &s.cover else { unreachable!() };
            let planted = planted_cover(&s).unwrap();
            let (idx, sim) = label_positive(&s.frames.frames, truth).unwrap();
            assert_eq!(idx, planted);
            assert!((sim - 1.0).abs() < 1e-6);
            let runner_up = s
                .frames
                .frames
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != planted)
                .map(|(_, f)| crate::data::cosine_similarity(f, truth))
                .fold(f64::MIN, f64::max);
            assert!(runner_up < 1.0 - 1e-6);
        }
    }

    /// Independent reading of the rule: locate keyword positions first, then slice.
    fn rule_oracle(article: &[String], follow: usize) -> Vec<String> {
        let key = &article[0];
        let positions: Vec<usize> = (0..article.len()).filter(|&i| &article[i] == key).collect();
        let mut out = Vec::new();
        for p in positions {
            let end = (p + 1 + follow).min(article.len());
            out.extend_from_slice(&article[p + 1..end]);
        }
        out
    }

    #[test]
    fn summaries_follow_the_rule() {
        let spec = SyntheticSpec {
            samples: 100,
            seed: 11,
            ..Default::default()
        };
        for s in generate(&spec).unwrap() {
            assert_eq!(s.summary, rule_oracle(&s.article, spec.follow));
            assert_eq!(s.summary.len(), spec.keyword_repeats * spec.follow);
            assert!(s.article.len() >= spec.article_min && s.article.len() <= spec.article_max);
        }
    }

    #[test]
    fn decoy_frames_avoid_the_cover_segment() {
        let spec = SyntheticSpec {
            samples: 100,
            ..Default::default()
        };
        let topics = spec.topic_embeddings();
        for s in generate(&spec).unwrap() {
            let cover = planted_cover(&s).unwrap();
            for (i, f) in s.frames.frames.iter().enumerate() {
                if i != cover && topics.contains(f) {
                    assert_ne!(i / spec.segment_len, cover / spec.segment_len);
                }
            }
        }
    }

    #[test]
    fn theme_cue_counts_mentions() {
        let spec = SyntheticSpec {
            samples: 100,
            cue: TopicCue::Theme,
            ..Default::default()
        };
        let topics = spec.topic_embeddings();
        for s in generate(&spec).unwrap() {
            assert_eq!(s.article[0], MARKER);
            assert_eq!(s.summary, rule_oracle(&s.article, spec.follow));
            let CoverTruth::Frame(truth) = &s.cover else { unreachable!() };
            let main = topics.iter().position(|t| t == truth).unwrap();
            let mut counts = vec![0; spec.topics];
            for tok in &s.article {
                if let Some((t, _)) = tok.strip_prefix('t').and_then(|r| r.split_once('_')) {
                    counts[t.parse::<usize>().unwrap()] += 1;
                }
            }
            assert_eq!(counts[main], spec.main_mentions);
            let mut decoys: Vec<usize> = counts.iter().copied().filter(|&c| c > 0 && c != spec.main_mentions).collect();
            decoys.sort();
            assert_eq!(decoys, vec![spec.decoy_mentions; spec.decoys]);
            assert!(s.article.iter().all(|t| !t.starts_with('k') || t == MARKER));
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(generate(&SyntheticSpec { cue: TopicCue::Theme, decoy_mentions: 6, ..Default::default() }).is_err());
        assert!(generate(&SyntheticSpec { decoys: 8, ..Default::default() }).is_err());
        assert!(generate(&SyntheticSpec { article_min: 5, ..Default::default() }).is_err());
    }
}
