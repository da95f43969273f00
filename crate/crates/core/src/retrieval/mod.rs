//! Hybrid retrieval: BM25, a quantized sparse impact index, an exact dense
//! index, union fusion and cross-encoder reranking.

mod dense;
mod fusion;
mod hybrid;
pub mod mining;
mod rerank;
mod sparse;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::ChunkStore;
use crate::error::{Error, Result};

pub use dense::DenseIndex;
pub use fusion::{fuse, interleave};
pub use hybrid::{HybridIndex, IndexKinds, RetrievalTrace, RetrieverVariant, StageRecord};
pub use mining::{mine_training_examples, MiningOutcome, TrainingExample};
pub use rerank::rerank;
pub use sparse::{dequantize, quantize, SparseIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Bm25,
    Sparse,
    Dense,
    Fused,
    Reranked,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Bm25 => "bm25",
            Stage::Sparse => "sparse",
            Stage::Dense => "dense",
            Stage::Fused => "fused",
            Stage::Reranked => "reranked",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub chunk_id: String,
    pub text: String,
    pub score: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalParams {
    /// Sparse retrieval depth.
    pub sparse_depth: usize,
    /// Dense retrieval depth.
    pub dense_depth: usize,
    /// Passages kept after reranking.
    pub final_depth: usize,
    /// BM25 recall depth for training-data mining.
    pub bm25_depth: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    /// Random easy negatives per mined question.
    pub easy_negatives: usize,
    /// Query encoder input budget in model tokens.
    pub encoder_query_tokens: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            sparse_depth: 32,
            dense_depth: 32,
            final_depth: 32,
            bm25_depth: 32,
            bm25_k1: 0.9,
            bm25_b: 0.4,
            easy_negatives: 8,
            encoder_query_tokens: 256,
        }
    }
}

impl RetrievalParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [
            ("sparse_depth", self.sparse_depth),
            ("dense_depth", self.dense_depth),
            ("final_depth", self.final_depth),
            ("bm25_depth", self.bm25_depth),
        ] {
            if val < 1 {
                v.push(format!("retrieval.{name} must be >= 1"));
            }
        }
        if self.final_depth > self.sparse_depth + self.dense_depth {
            v.push("retrieval.final_depth must not exceed sparse_depth + dense_depth".into());
        }
        if !(self.bm25_k1.is_finite() && self.bm25_k1 >= 0.0) {
            v.push("retrieval.bm25_k1 must be a nonnegative number".into());
        }
        if !(0.0..=1.0).contains(&self.bm25_b) {
            v.push("retrieval.bm25_b must lie in [0, 1]".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Sort by descending score, ties by ascending store position (which is
/// ascending chunk_id), and keep the first `depth`.
pub(crate) fn top_positions(mut scored: Vec<(usize, f64)>, depth: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| by_score_then_position(*a, *b));
    scored.truncate(depth);
    scored
}

pub(crate) fn by_score_then_position(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

pub(crate) fn to_passages(store: &ChunkStore, hits: Vec<(usize, f64)>, stage: Stage) -> Vec<ScoredPassage> {
    hits.into_iter()
        .map(|(pos, score)| {
            let c = store.get(pos).expect("index position resolves in store");
            ScoredPassage {
                chunk_id: c.chunk_id.clone(),
                text: c.text.clone(),
                score,
                stage,
            }
        })
        .collect()
}
