use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    ChatProvider, ChatRequest, DenseEmbedder, DenseVector, PairScorer, SparseEncoder,
    SparseWeights, Truncation,
};
use crate::error::Result;

/// Per-service call counters.
#[derive(Debug, Default)]
pub struct Meter {
    chat: AtomicU64,
    dense: AtomicU64,
    sparse: AtomicU64,
    score: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub chat: u64,
    pub dense: u64,
    pub sparse: u64,
    pub score: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.chat + self.dense + self.sparse + self.score
    }
}

impl Meter {
    pub fn counts(&self) -> CallCounts {
        CallCounts {
            chat: self.chat.load(Ordering::Relaxed),
            dense: self.dense.load(Ordering::Relaxed),
            sparse: self.sparse.load(Ordering::Relaxed),
            score: self.score.load(Ordering::Relaxed),
        }
    }
}

pub(super) struct Metered<T: ?Sized> {
    inner: Arc<T>,
    meter: Arc<Meter>,
}

impl<T: ?Sized> Metered<T> {
    pub(super) fn new(inner: Arc<T>, meter: Arc<Meter>) -> Self {
        Self { inner, meter }
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for Metered<T> {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        self.meter.chat.fetch_add(1, Ordering::Relaxed);
        self.inner.chat(request)
    }
}

impl<T: DenseEmbedder + ?Sized> DenseEmbedder for Metered<T> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
    fn embed_dense(&self, texts: &[&str]) -> Result<Vec<DenseVector>> {
        self.meter.dense.fetch_add(1, Ordering::Relaxed);
        self.inner.embed_dense(texts)
    }
}

impl<T: SparseEncoder + ?Sized> SparseEncoder for Metered<T> {
    fn vocab_size(&self) -> u32 {
        self.inner.vocab_size()
    }
    fn embed_sparse(&self, texts: &[&str]) -> Result<Vec<SparseWeights>> {
        self.meter.sparse.fetch_add(1, Ordering::Relaxed);
        self.inner.embed_sparse(texts)
    }
}

impl<T: PairScorer + ?Sized> PairScorer for Metered<T> {
    fn truncation(&self) -> Truncation {
        self.inner.truncation()
    }
    fn score_truncated(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        self.meter.score.fetch_add(1, Ordering::Relaxed);
        self.inner.score_truncated(query, passages)
    }
}
