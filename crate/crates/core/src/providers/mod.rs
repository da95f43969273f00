//! Interfaces to the neural services the pipeline depends on: a chat LLM,
//! a dense embedder, a sparse term-weight encoder and a cross-encoder
//! scorer. Every interface has a deterministic mock so the rest of the
//! crate runs offline.

mod cache;
mod http;
mod limiter;
mod meter;
pub mod mock;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::templates::{Template, TemplateId};

pub use cache::{CachedChat, CachedScorer};
pub use http::{
    HttpChat, HttpDense, HttpScorer, HttpSparse, ProviderConfig, Transport, TransportFailure,
    UreqTransport,
};
pub use limiter::Limiter;
pub use meter::{CallCounts, Meter};
pub use mock::{MockChat, MockDense, MockScorer, MockSparse, Unavailable};

pub const DEFAULT_DENSE_DIM: usize = 768;
pub const DEFAULT_VOCAB_SIZE: u32 = 30_000;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

const SLOT_MARKERS: [&str; 3] = ["{question}", "{passage}", "{knowledge}"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub template_id: TemplateId,
    pub filled_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        template_id: TemplateId,
        filled_prompt: String,
        temperature: f64,
        max_output_tokens: u32,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&temperature) {
            return Err(Error::Contract(format!(
                "temperature {temperature} outside [0, 1]"
            )));
        }
        if max_output_tokens == 0 {
            return Err(Error::Contract("max_output_tokens must be positive".into()));
        }
        if let Some(m) = SLOT_MARKERS.iter().find(|m| filled_prompt.contains(*m)) {
            return Err(Error::Contract(format!("prompt has unsubstituted slot {m}")));
        }
        Ok(Self {
            template_id,
            filled_prompt,
            temperature,
            max_output_tokens,
        })
    }

    /// Fill `template` and wrap it with the default sampling settings
    /// (temperature 0).
    pub fn from_template(template: &Template, values: &[(&str, &str)]) -> Result<Self> {
        let prompt = template.fill(values)?;
        Ok(Self {
            template_id: template.id(),
            filled_prompt: prompt,
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        })
    }

    /// SHA-256 of the filled prompt, hex encoded.
    pub fn prompt_hash(&self) -> String {
        sha256_hex(self.filled_prompt.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector(Vec<f32>);

impl DenseVector {
    pub fn new(values: Vec<f32>, dimension: usize) -> Result<Self> {
        if values.len() != dimension {
            return Err(Error::Contract(format!(
                "dense vector has {} entries, expected {dimension}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("dense vector has non-finite entry".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &[f32]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum()
    }

    pub fn cosine(&self, other: &DenseVector) -> f64 {
        let dot = self.dot(&other.0);
        let na = self.dot(&self.0).sqrt();
        let nb = other.dot(&other.0).sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Term-id to strictly positive weight. Zero and negative weights are
/// dropped on construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseWeights(BTreeMap<u32, f32>);

impl SparseWeights {
    pub fn new<I>(entries: I, vocab_size: u32) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, f32)>,
    {
        let mut map = BTreeMap::new();
        for (term, w) in entries {
            if term >= vocab_size {
                return Err(Error::Contract(format!(
                    "term id {term} outside vocabulary of {vocab_size}"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Contract(format!("non-finite weight for term {term}")));
            }
            if w > 0.0 {
                let e = map.entry(term).or_insert(w);
                if w > *e {
                    *e = w;
                }
            }
        }
        Ok(Self(map))
    }

    pub fn entries(&self) -> &BTreeMap<u32, f32> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, term: u32) -> Option<f32> {
        self.0.get(&term).copied()
    }

    pub fn dot(&self, other: &SparseWeights) -> f64 {
        self.0
            .iter()
            .filter_map(|(t, w)| other.0.get(t).map(|v| f64::from(*w) * f64::from(*v)))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.values().map(|w| f64::from(*w).powi(2)).sum::<f64>().sqrt()
    }
}

/// Whitespace-token budgets for the cross-encoder input. Budgets are model
/// token limits divided by a subword multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub query_tokens: usize,
    pub passage_tokens: usize,
    pub subword_multiplier: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            query_tokens: 126,
            passage_tokens: 384,
            subword_multiplier: 1.3,
        }
    }
}

impl Truncation {
    pub fn query_words(&self) -> usize {
        (self.query_tokens as f64 / self.subword_multiplier).floor() as usize
    }

    pub fn passage_words(&self) -> usize {
        (self.passage_tokens as f64 / self.subword_multiplier).floor() as usize
    }

    pub fn query<'a>(&self, text: &'a str) -> &'a str {
        truncate_words(text, self.query_words())
    }

    pub fn passage<'a>(&self, text: &'a str) -> &'a str {
        truncate_words(text, self.passage_words())
    }
}

/// Prefix of `text` holding at most `max_words` whitespace tokens.
pub fn truncate_words(text: &str, max_words: usize) -> &str {
    let text = text.trim_start();
    let mut count = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word && count == max_words {
                return &text[..i];
            }
            in_word = false;
        } else if !in_word {
            in_word = true;
            count += 1;
            if count > max_words {
                return text[..i].trim_end();
            }
        }
    }
    text
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String>;
}

pub trait DenseEmbedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_dense(&self, texts: &[&str]) -> Result<Vec<DenseVector>>;
}

pub trait SparseEncoder: Send + Sync {
    fn vocab_size(&self) -> u32;
    fn embed_sparse(&self, texts: &[&str]) -> Result<Vec<SparseWeights>>;
}

pub trait PairScorer: Send + Sync {
    fn truncation(&self) -> Truncation {
        Truncation::default()
    }

    /// Score inputs that are already truncated.
    fn score_truncated(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>>;

    /// Truncate to the cross-encoder budgets, then score. One finite score
    /// per passage, in input order.
    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        if passages.is_empty() {
            return Ok(Vec::new());
        }
        let t = self.truncation();
        let q = t.query(query);
        let ps: Vec<&str> = passages.iter().map(|p| t.passage(p)).collect();
        let scores = self.score_truncated(q, &ps)?;
        if scores.len() != passages.len() {
            return Err(Error::Contract(format!(
                "scorer returned {} scores for {} passages",
                scores.len(),
                passages.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract("scorer returned non-finite score".into()));
        }
        Ok(scores)
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for Arc<T> {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        (**self).chat(request)
    }
}

impl<T: PairScorer + ?Sized> PairScorer for Arc<T> {
    fn truncation(&self) -> Truncation {
        (**self).truncation()
    }

    fn score_truncated(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        (**self).score_truncated(query, passages)
    }
}

pub(crate) fn ensure_nonempty(texts: &[&str]) -> Result<()> {
    if texts.is_empty() {
        Err(Error::Contract("empty input list".into()))
    } else {
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The four services bundled for the pipeline.
#[derive(Clone)]
pub struct Providers {
    pub chat: Arc<dyn ChatProvider>,
    pub dense: Arc<dyn DenseEmbedder>,
    pub sparse: Arc<dyn SparseEncoder>,
    pub scorer: Arc<dyn PairScorer>,
}

impl Providers {
    /// Fully mocked set; the chat mock answers only with fallbacks.
    pub fn mock(seed: u64) -> Self {
        Self::mock_with_chat(seed, MockChat::new())
    }

    pub fn mock_with_chat(seed: u64, chat: impl ChatProvider + 'static) -> Self {
        let dense = MockDense::new(DEFAULT_DENSE_DIM, seed);
        Self {
            chat: Arc::new(chat),
            dense: Arc::new(dense.clone()),
            sparse: Arc::new(MockSparse::new(DEFAULT_VOCAB_SIZE, seed)),
            scorer: Arc::new(MockScorer::dense(dense)),
        }
    }

    pub fn with_chat(mut self, chat: impl ChatProvider + 'static) -> Self {
        self.chat = Arc::new(chat);
        self
    }

    pub fn with_scorer(mut self, scorer: impl PairScorer + 'static) -> Self {
        self.scorer = Arc::new(scorer);
        self
    }

    /// Wrap every service in a call counter.
    pub fn metered(&self) -> (Providers, Arc<Meter>) {
        let meter = Arc::new(Meter::default());
        let p = Providers {
            chat: Arc::new(meter::Metered::new(self.chat.clone(), meter.clone())),
            dense: Arc::new(meter::Metered::new(self.dense.clone(), meter.clone())),
            sparse: Arc::new(meter::Metered::new(self.sparse.clone(), meter.clone())),
            scorer: Arc::new(meter::Metered::new(self.scorer.clone(), meter.clone())),
        };
        (p, meter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncate_words_keeps_prefix() {
        assert_eq!(truncate_words("a b  c d", 2), "a b");
        assert_eq!(truncate_words("  a b", 5), "a b");
        assert_eq!(truncate_words("a b", 0), "");
        assert_eq!(truncate_words("a b ", 2), "a b");
    }

    #[test]
    fn truncation_budgets() {
        let t = Truncation::default();
        assert_eq!(t.query_words(), 96);
        assert_eq!(t.passage_words(), 295);
    }

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new(TemplateId::Reader, "x".into(), 1.5, 10).is_err());
        assert!(ChatRequest::new(TemplateId::Reader, "x".into(), 0.0, 0).is_err());
        assert!(ChatRequest::new(TemplateId::Reader, "Q {question}".into(), 0.0, 5).is_err());
        assert!(ChatRequest::new(TemplateId::Reader, "Q".into(), 0.0, 5).is_ok());
    }

    #[test]
    fn sparse_weights_drop_nonpositive() {
        let w = SparseWeights::new([(1, 0.0), (2, -1.0), (3, 0.5)], 10).unwrap();
        assert_eq!(w.len(), 1);
        assert!(SparseWeights::new([(10, 1.0)], 10).is_err());
    }

    #[test]
    fn dense_vector_shape_checked() {
        assert!(DenseVector::new(vec![1.0, 2.0], 3).is_err());
        assert!(DenseVector::new(vec![f32::NAN], 1).is_err());
    }
}
