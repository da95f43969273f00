//! Deterministic offline providers.
//!
//! Every output is a pure function of the input text and the configured
//! seed. Pseudo-random values come from ChaCha8 seeded with a SHA-256 of
//! the seed and the text, which is stable across platforms and releases.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    ensure_nonempty, sha256_hex, ChatProvider, ChatRequest, DenseEmbedder, DenseVector,
    PairScorer, SparseEncoder, SparseWeights,
};
use crate::error::{Error, Result};
use crate::templates::{TemplateId, TemplateSet};
use crate::text;

type Rule = Arc<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

/// Scripted chat provider.
///
/// Lookup order: exact table keyed by the SHA-256 of the filled prompt,
/// then rules in insertion order, then a fallback derived from the prompt
/// hash.
#[derive(Clone, Default)]
pub struct MockChat {
    table: HashMap<String, String>,
    rules: Vec<Rule>,
}

impl std::fmt::Debug for MockChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockChat")
            .field("table", &self.table.len())
            .field("rules", &self.rules.len())
            .finish()
    }
}

impl MockChat {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fallback completion for a prompt with no script entry.
    pub fn fallback_completion(filled_prompt: &str) -> String {
        let h = sha256_hex(filled_prompt.as_bytes());
        format!("mock completion {}", &h[..16])
    }

    pub fn script(mut self, filled_prompt: &str, completion: impl Into<String>) -> Self {
        self.table
            .insert(sha256_hex(filled_prompt.as_bytes()), completion.into());
        self
    }

    pub fn script_hash(mut self, prompt_sha256: impl Into<String>, completion: impl Into<String>) -> Self {
        self.table.insert(prompt_sha256.into(), completion.into());
        self
    }

    pub fn rule<F>(mut self, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
    {
        self.rules.push(Arc::new(f));
        self
    }

    /// Answer every `template` request with a fixed completion.
    pub fn always(self, template: TemplateId, completion: impl Into<String>) -> Self {
        let completion = completion.into();
        self.rule(move |r| (r.template_id == template).then(|| completion.clone()))
    }

    /// Answer `template` requests with the question slot of the prompt.
    pub fn echo(self, template: TemplateId) -> Self {
        let templates = TemplateSet::default();
        self.rule(move |r| {
            if r.template_id != template {
                return None;
            }
            templates
                .get(template)
                .unfill(&r.filled_prompt)?
                .into_iter()
                .find(|(k, _)| k == "question")
                .map(|(_, v)| v)
        })
    }

    /// Load a line-delimited script file. Each line is one of
    /// `{"prompt_sha256": .., "completion": ..}`,
    /// `{"template": .., "contains": .., "completion": ..}` or
    /// `{"template": .., "echo": true}`.
    pub fn from_script_file(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            prompt_sha256: Option<String>,
            template: Option<TemplateId>,
            contains: Option<String>,
            completion: Option<String>,
            #[serde(default)]
            echo: bool,
        }
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut mock = MockChat::new();
        for (n, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Dataset {
                line: n + 1,
                field: "script".into(),
                message: msg.into(),
            };
            let l: Line = serde_json::from_str(line).map_err(|e| bad(&e.to_string()))?;
            mock = match (l.prompt_sha256, l.template, l.echo, l.completion) {
                (Some(h), _, _, Some(c)) => mock.script_hash(h, c),
                (None, Some(t), true, _) => mock.echo(t),
                (None, t, false, Some(c)) => {
                    let needle = l.contains.unwrap_or_default();
                    mock.rule(move |r| {
                        (t.is_none_or(|t| t == r.template_id)
                            && r.filled_prompt.contains(&needle))
                        .then(|| c.clone())
                    })
                }
                _ => return Err(bad("needs prompt_sha256+completion, template+echo, or completion")),
            };
        }
        Ok(mock)
    }
}

impl ChatProvider for MockChat {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        if let Some(c) = self.table.get(&request.prompt_hash()) {
            return Ok(c.clone());
        }
        if let Some(c) = self.rules.iter().find_map(|r| r(request)) {
            return Ok(c);
        }
        Ok(Self::fallback_completion(&request.filled_prompt))
    }
}

fn keyed_rng(domain: &[u8], seed: u64, text: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(domain);
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Unit-norm pseudo-random vectors keyed on the text.
#[derive(Debug, Clone)]
pub struct MockDense {
    dimension: usize,
    seed: u64,
}

impl MockDense {
    pub fn new(dimension: usize, seed: u64) -> Self {
        Self { dimension, seed }
    }

    pub fn vector(&self, text: &str) -> DenseVector {
        let mut rng = keyed_rng(b"dense", self.seed, text);
        let raw: Vec<f64> = (0..self.dimension)
            .map(|_| f64::from(rng.next_u32() >> 8) / f64::from(1u32 << 24) * 2.0 - 1.0)
            .collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let values = raw.iter().map(|v| (v / norm) as f32).collect();
        DenseVector::new(values, self.dimension).expect("finite by construction")
    }
}

impl DenseEmbedder for MockDense {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_dense(&self, texts: &[&str]) -> Result<Vec<DenseVector>> {
        ensure_nonempty(texts)?;
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Lexical term weights: each distinct lowercased term maps to a hashed
/// term id with weight `1 + ln(1 + tf)`. Colliding terms keep the larger
/// weight.
#[derive(Debug, Clone)]
pub struct MockSparse {
    vocab_size: u32,
    seed: u64,
}

impl MockSparse {
    pub fn new(vocab_size: u32, seed: u64) -> Self {
        assert!(vocab_size > 0, "vocabulary must be nonempty");
        Self { vocab_size, seed }
    }

    pub fn term_id(&self, term: &str) -> u32 {
        let mut h = Sha256::new();
        h.update(b"sparse");
        h.update(self.seed.to_le_bytes());
        h.update(term.as_bytes());
        let d = h.finalize();
        u32::from_le_bytes([d[0], d[1], d[2], d[3]]) % self.vocab_size
    }

    pub fn weights(&self, text: &str) -> SparseWeights {
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in text::terms(text) {
            *tf.entry(t).or_default() += 1;
        }
        let entries = tf
            .iter()
            .map(|(t, n)| (self.term_id(t), (1.0 + (1.0 + f64::from(*n)).ln()) as f32));
        SparseWeights::new(entries, self.vocab_size).expect("ids within vocab")
    }
}

impl SparseEncoder for MockSparse {
    fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    fn embed_sparse(&self, texts: &[&str]) -> Result<Vec<SparseWeights>> {
        ensure_nonempty(texts)?;
        Ok(texts.iter().map(|t| self.weights(t)).collect())
    }
}

/// Cross-encoder stand-in scoring by cosine similarity of mock
/// representations.
#[derive(Debug, Clone)]
pub enum MockScorer {
    /// Cosine of [`MockDense`] vectors.
    Dense(MockDense),
    /// Cosine of [`MockSparse`] weights; rewards shared terms.
    Lexical(MockSparse),
}

impl MockScorer {
    pub fn dense(embedder: MockDense) -> Self {
        MockScorer::Dense(embedder)
    }

    pub fn lexical(encoder: MockSparse) -> Self {
        MockScorer::Lexical(encoder)
    }
}

impl PairScorer for MockScorer {
    fn score_truncated(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        Ok(match self {
            MockScorer::Dense(e) => {
                let q = e.vector(query);
                passages.iter().map(|p| q.cosine(&e.vector(p))).collect()
            }
            MockScorer::Lexical(e) => {
                let q = e.weights(query);
                let qn = q.norm();
                passages
                    .iter()
                    .map(|p| {
                        let w = e.weights(p);
                        let d = qn * w.norm();
                        if d == 0.0 {
                            0.0
                        } else {
                            q.dot(&w) / d
                        }
                    })
                    .collect()
            }
        })
    }
}

/// A provider that fails every call; used to prove a stage is bypassed.
#[derive(Debug, Clone, Default)]
pub struct Unavailable;

impl Unavailable {
    fn err() -> Error {
        Error::Provider {
            status: 503,
            message: "provider unavailable".into(),
        }
    }
}

impl ChatProvider for Unavailable {
    fn chat(&self, _: &ChatRequest) -> Result<String> {
        Err(Self::err())
    }
}

impl DenseEmbedder for Unavailable {
    fn dimension(&self) -> usize {
        super::DEFAULT_DENSE_DIM
    }
    fn embed_dense(&self, _: &[&str]) -> Result<Vec<DenseVector>> {
        Err(Self::err())
    }
}

impl SparseEncoder for Unavailable {
    fn vocab_size(&self) -> u32 {
        super::DEFAULT_VOCAB_SIZE
    }
    fn embed_sparse(&self, _: &[&str]) -> Result<Vec<SparseWeights>> {
        Err(Self::err())
    }
}

impl PairScorer for Unavailable {
    fn score_truncated(&self, _: &str, _: &[&str]) -> Result<Vec<f64>> {
        Err(Self::err())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(t: TemplateId, p: &str) -> ChatRequest {
        ChatRequest::new(t, p.into(), 0.0, 16).unwrap()
    }

    #[test]
    fn scripted_then_fallback() {
        let mock = MockChat::new().script("hello", "world");
        assert_eq!(mock.chat(&req(TemplateId::Reader, "hello")).unwrap(), "world");
        let fb = mock.chat(&req(TemplateId::Reader, "other")).unwrap();
        let expected_hash = hex::encode(Sha256::digest(b"other"));
        assert_eq!(fb, format!("mock completion {}", &expected_hash[..16]));
    }

    #[test]
    fn echo_returns_question_slot() {
        let t = TemplateSet::default();
        let prompt = t.get(TemplateId::Rewrite).fill(&[("question", "why?")]).unwrap();
        let mock = MockChat::new().echo(TemplateId::Rewrite);
        assert_eq!(mock.chat(&req(TemplateId::Rewrite, &prompt)).unwrap(), "why?");
    }

    #[test]
    fn dense_is_deterministic_and_unit_norm() {
        let e = MockDense::new(768, 7);
        let a = e.embed_dense(&["x", "x"]).unwrap();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[0].len(), 768);
        assert!((a[0].cosine(&a[0]) - 1.0).abs() < 1e-9);
        assert!(e.embed_dense(&[]).is_err());
        assert_ne!(MockDense::new(768, 8).vector("x"), a[0]);
    }

    #[test]
    fn sparse_frequency_monotone() {
        let e = MockSparse::new(30_000, 0);
        let w = e.weights("a a b");
        assert_eq!(w.len(), 2);
        assert!(w.get(e.term_id("a")).unwrap() > w.get(e.term_id("b")).unwrap());
        assert!(w.entries().values().all(|v| *v > 0.0));
    }

    #[test]
    fn self_similarity_maximal() {
        let s = MockScorer::dense(MockDense::new(64, 1));
        let scores = s.score_pairs("the query", &["unrelated", "the query", "other"]).unwrap();
        assert!(scores[1] > scores[0] && scores[1] > scores[2]);
        assert!(s.score_pairs("q", &[]).unwrap().is_empty());
    }

    #[test]
    fn script_file_rules() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        std::fs::write(
            &path,
            "{\"template\":\"relevance\",\"contains\":\"embol\",\"completion\":\"Yes\"}\n\
             {\"template\":\"rewrite\",\"echo\":true}\n",
        )
        .unwrap();
        let mock = MockChat::from_script_file(&path).unwrap();
        assert_eq!(mock.chat(&req(TemplateId::Relevance, "embolism")).unwrap(), "Yes");
        assert!(mock
            .chat(&req(TemplateId::Relevance, "nothing"))
            .unwrap()
            .starts_with("mock completion"));
    }
}
