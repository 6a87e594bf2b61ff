//! Character n-gram feature embedding.
//!
//! A token is wrapped in `<` `>` boundary markers, decomposed into character
//! n-grams, and its vector is the sum of the vectors of those n-grams. The
//! n-gram vectors live in a fixed hashed bucket table seeded from the run
//! seed; they are not trained. Field values with several tokens (paths,
//! stack traces) are split and the token vectors averaged so every field
//! embeds to the same dimension.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{EventSchema, Label, SysmonEvent, ABSENT};
use crate::rng::{fnv1a64, stream};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("empty token")]
    EmptyToken,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown feature {0}")]
    UnknownFeature(String),
}

/// Hashed n-gram vocabulary parameters. Serialized into checkpoints so
/// inference reproduces training embeddings exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramVocabConfig {
    pub n_min: usize,
    pub n_max: usize,
    /// Embedding dimension N.
    pub dim: usize,
    /// Hash table size G.
    pub buckets: usize,
    pub seed: u64,
}

impl Default for NgramVocabConfig {
    fn default() -> Self {
        Self { n_min: 3, n_max: 6, dim: 16, buckets: 1 << 20, seed: 0 }
    }
}

impl NgramVocabConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(format!("invalid n-gram range [{}, {}]", self.n_min, self.n_max));
        }
        if self.dim == 0 || self.buckets == 0 {
            return Err("dim and buckets must be at least 1".into());
        }
        Ok(())
    }
}

/// Bucket table of n-gram vectors, `buckets x dim`, deterministic in the seed.
#[derive(Debug, Clone)]
pub struct NgramTable<T> {
    vectors: Vec<T>,
    config: NgramVocabConfig,
}

impl<T: Scalar> NgramTable<T> {
    /// Rows are uniform in `[-1/dim, 1/dim]`, drawn from the `ngram-table`
    /// stream of the embedding seed.
    pub fn new(config: NgramVocabConfig) -> Self {
        let mut rng = stream(config.seed, "ngram-table", 0);
        let scale = 1.0 / config.dim as f64;
        let vectors = (0..config.buckets * config.dim)
            .map(|_| T::of((rng.gen::<f64>() * 2.0 - 1.0) * scale))
            .collect();
        Self { vectors, config }
    }

    /// Zeroed table for tests.
    pub fn zeroed(config: NgramVocabConfig) -> Self {
        Self { vectors: vec![T::zero(); config.buckets * config.dim], config }
    }

    pub fn config(&self) -> &NgramVocabConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn bucket_of(&self, gram: &str) -> usize {
        (fnv1a64(gram.as_bytes()) % self.config.buckets as u64) as usize
    }

    pub fn row(&self, bucket: usize) -> &[T] {
        &self.vectors[bucket * self.config.dim..(bucket + 1) * self.config.dim]
    }

    #[cfg(test)]
    pub(crate) fn row_mut(&mut self, bucket: usize) -> &mut [T] {
        &mut self.vectors[bucket * self.config.dim..(bucket + 1) * self.config.dim]
    }
}

/// All character n-grams of the boundary-marked token, shortest length
/// first, left to right within each length. A token too short to produce
/// any n-gram yields the whole marked token.
pub fn extract_ngrams(word: &str, config: &NgramVocabConfig) -> Result<Vec<String>, EmbedError> {
    let trimmed = word.trim();
    if trimmed.is_empty() {
        return Err(EmbedError::EmptyToken);
    }
    let marked: Vec<char> = std::iter::once('<')
        .chain(trimmed.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut grams = Vec::new();
    for n in config.n_min..=config.n_max {
        if n > marked.len() {
            break;
        }
        for window in marked.windows(n) {
            grams.push(window.iter().collect::<String>());
        }
    }
    if grams.is_empty() {
        grams.push(marked.iter().collect());
    }
    Ok(grams)
}

/// Sum of the bucket vectors of the token's n-grams.
pub fn embed_token<T: Scalar>(word: &str, table: &NgramTable<T>) -> Result<Vec<T>, EmbedError> {
    let mut out = vec![T::zero(); table.dim()];
    for gram in extract_ngrams(word, table.config())? {
        let row = table.row(table.bucket_of(&gram));
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(out)
}

/// Score of a token against a context vector: the sum over the token's
/// n-grams of the dot product between n-gram vector and context.
pub fn ngram_score<T: Scalar>(word: &str, context: &[T], table: &NgramTable<T>) -> Result<T, EmbedError> {
    if context.len() != table.dim() {
        return Err(EmbedError::DimensionMismatch { expected: table.dim(), got: context.len() });
    }
    let mut score = T::zero();
    for gram in extract_ngrams(word, table.config())? {
        let row = table.row(table.bucket_of(&gram));
        let mut dot = T::zero();
        for (&z, &c) in row.iter().zip(context) {
            dot += z * c;
        }
        score += dot;
    }
    Ok(score)
}

/// Split a field value on whitespace and path-ish separators.
pub fn tokenize_field(value: &str) -> Vec<&str> {
    value
        .split(|c: char| c.is_whitespace() || c == '\\' || c == '/' || c == '|')
        .filter(|t| !t.is_empty())
        .collect()
}

/// Embed one field value: tokenize, embed each token, average. Empty values
/// fall back to the absent sentinel.
pub fn embed_field<T: Scalar>(value: &str, table: &NgramTable<T>) -> Vec<T> {
    let tokens = tokenize_field(value);
    if tokens.is_empty() {
        return embed_token(ABSENT, table).expect("sentinel is non-empty");
    }
    let mut acc = vec![T::zero(); table.dim()];
    for token in &tokens {
        let v = embed_token(token, table).expect("tokens are non-empty");
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let inv = T::one() / T::of(tokens.len() as f64);
    for a in acc.iter_mut() {
        *a *= inv;
    }
    acc
}

/// Per-event numeric matrix: one row per selected feature, in the order the
/// caller passes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSample<T> {
    pub data: Vec<T>,
    pub features: usize,
    pub dim: usize,
    pub label: Option<Label>,
    pub timestamp_ms: i64,
}

impl<T: Scalar> EmbeddedSample<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major flattening used as model / scaler input.
    pub fn flat(&self) -> &[T] {
        &self.data
    }
}

pub fn embed_event<T: Scalar>(
    event: &SysmonEvent,
    selected: &[String],
    schema: &EventSchema,
    table: &NgramTable<T>,
) -> Result<EmbeddedSample<T>, EmbedError> {
    let dim = table.dim();
    let mut data = Vec::with_capacity(selected.len() * dim);
    for name in selected {
        let idx = schema.index_of(name).ok_or_else(|| EmbedError::UnknownFeature(name.clone()))?;
        data.extend(embed_field(&event.fields[idx], table));
    }
    Ok(EmbeddedSample { data, features: selected.len(), dim, label: event.label, timestamp_ms: event.timestamp_ms })
}
