use std::collections::HashMap;

use super::Sample;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const START: usize = 2;
pub const EOS: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Largest vocabulary the model supports, specials included.
pub const MAX_VOCAB: usize = 50_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Counts article and summary tokens and keeps the `max_size − 4` most
    /// frequent, ties in lexicographic order, after the four specials.
    pub fn build(samples: &[Sample], max_size: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::data("cannot build a vocabulary from an empty dataset"));
        }
        if !(SPECIALS.len() < max_size && max_size <= MAX_VOCAB) {
            return Err(Error::Input(format!("vocabulary size must lie in [5, {MAX_VOCAB}], got {max_size}")));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in samples {
            for t in s.article.iter().chain(&s.summary) {
                if !SPECIALS.contains(&t.as_str()) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        Self::from_tokens(
            SPECIALS
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
                .collect(),
        )
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Checkpoint("vocabulary must start with the four special tokens".into()));
        }
        if tokens.len() > MAX_VOCAB {
            return Err(Error::Checkpoint(format!("vocabulary of {} exceeds {MAX_VOCAB}", tokens.len())));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `UNK`.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
