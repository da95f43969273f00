use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{fuse, interleave, rerank, DenseIndex, RetrievalParams, ScoredPassage, SparseIndex};
use crate::corpus::ChunkStore;
use crate::error::{Error, Result};
use crate::providers::{truncate_words, Providers, Truncation};

/// Retrieval strategies, one per row of the retriever comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RetrieverVariant {
    #[serde(rename = "bm25")]
    Bm25,
    #[serde(rename = "sparse")]
    Sparse,
    #[serde(rename = "dense")]
    Dense,
    #[serde(rename = "sparse+dense")]
    SparseDense,
    #[serde(rename = "sparse+rerank")]
    SparseRerank,
    #[serde(rename = "dense+rerank")]
    DenseRerank,
    /// Sparse and dense union, reranked.
    #[serde(rename = "hybrid")]
    Hybrid,
}

impl RetrieverVariant {
    pub const ALL: [RetrieverVariant; 7] = [
        RetrieverVariant::Bm25,
        RetrieverVariant::Sparse,
        RetrieverVariant::Dense,
        RetrieverVariant::SparseDense,
        RetrieverVariant::SparseRerank,
        RetrieverVariant::DenseRerank,
        RetrieverVariant::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverVariant::Bm25 => "bm25",
            RetrieverVariant::Sparse => "sparse",
            RetrieverVariant::Dense => "dense",
            RetrieverVariant::SparseDense => "sparse+dense",
            RetrieverVariant::SparseRerank => "sparse+rerank",
            RetrieverVariant::DenseRerank => "dense+rerank",
            RetrieverVariant::Hybrid => "hybrid",
        }
    }

    fn needs_sparse(self) -> bool {
        !matches!(self, RetrieverVariant::Dense | RetrieverVariant::DenseRerank)
    }

    fn needs_dense(self) -> bool {
        matches!(
            self,
            RetrieverVariant::Dense
                | RetrieverVariant::SparseDense
                | RetrieverVariant::DenseRerank
                | RetrieverVariant::Hybrid
        )
    }
}

impl fmt::Display for RetrieverVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RetrieverVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RetrieverVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(vec![format!("unknown retriever variant {s:?}")]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKinds {
    Sparse,
    Dense,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub output: Vec<(String, f64)>,
    /// Wall time; excluded from digests.
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub variant: RetrieverVariant,
    pub query: String,
    pub encoder_query_truncated: bool,
    pub stages: Vec<StageRecord>,
}

impl RetrievalTrace {
    /// Digest over everything except timings.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.variant.as_str().as_bytes());
        h.update([0]);
        h.update(self.query.as_bytes());
        h.update([u8::from(self.encoder_query_truncated)]);
        for s in &self.stages {
            h.update(s.stage.as_bytes());
            for (id, score) in &s.output {
                h.update(id.as_bytes());
                h.update(score.to_bits().to_le_bytes());
            }
            h.update([0xff]);
        }
        hex::encode(h.finalize())
    }
}

/// A chunk store with its sparse and/or dense index.
#[derive(Debug, Clone)]
pub struct HybridIndex {
    store: Arc<ChunkStore>,
    sparse: Option<SparseIndex>,
    dense: Option<DenseIndex>,
}

impl HybridIndex {
    pub fn build(store: Arc<ChunkStore>, providers: &Providers, kinds: IndexKinds) -> Result<Self> {
        let sparse = match kinds {
            IndexKinds::Sparse | IndexKinds::Both => {
                Some(SparseIndex::build(store.clone(), providers.sparse.as_ref())?)
            }
            IndexKinds::Dense => None,
        };
        let dense = match kinds {
            IndexKinds::Dense | IndexKinds::Both => {
                Some(DenseIndex::build(store.clone(), providers.dense.as_ref())?)
            }
            IndexKinds::Sparse => None,
        };
        Ok(Self {
            store,
            sparse,
            dense,
        })
    }

    /// Write `sparse/` and `dense/` subdirectories. Each index is built in
    /// full before anything is written.
    pub fn save(&self, dir: &Path) -> Result<()> {
        if let Some(s) = &self.sparse {
            s.save(&dir.join("sparse"))?;
        }
        if let Some(d) = &self.dense {
            d.save(&dir.join("dense"))?;
        }
        Ok(())
    }

    /// Load whichever of `sparse/` and `dense/` exist under `dir`.
    pub fn load(dir: &Path, store: Arc<ChunkStore>) -> Result<Self> {
        let sparse_dir = dir.join("sparse");
        let dense_dir = dir.join("dense");
        let sparse = if sparse_dir.is_dir() {
            Some(SparseIndex::load(&sparse_dir, store.clone())?)
        } else {
            None
        };
        let dense = if dense_dir.is_dir() {
            Some(DenseIndex::load(&dense_dir, store.clone())?)
        } else {
            None
        };
        if sparse.is_none() && dense.is_none() {
            return Err(Error::Data(format!("no index found under {}", dir.display())));
        }
        Ok(Self {
            store,
            sparse,
            dense,
        })
    }

    pub fn store(&self) -> &Arc<ChunkStore> {
        &self.store
    }

    pub fn sparse(&self) -> Option<&SparseIndex> {
        self.sparse.as_ref()
    }

    pub fn dense(&self) -> Option<&DenseIndex> {
        self.dense.as_ref()
    }

    fn require_sparse(&self) -> Result<&SparseIndex> {
        self.sparse
            .as_ref()
            .ok_or_else(|| Error::Contract("variant needs a sparse index".into()))
    }

    fn require_dense(&self) -> Result<&DenseIndex> {
        self.dense
            .as_ref()
            .ok_or_else(|| Error::Contract("variant needs a dense index".into()))
    }

    /// Run one retrieval strategy for `query` (the rewritten query and the
    /// expansion, already concatenated).
    pub fn retrieve(
        &self,
        providers: &Providers,
        query: &str,
        params: &RetrievalParams,
        variant: RetrieverVariant,
    ) -> Result<(Vec<ScoredPassage>, RetrievalTrace)> {
        params.validate()?;
        if variant.needs_sparse() {
            self.require_sparse()?;
        }
        if variant.needs_dense() {
            self.require_dense()?;
        }

        let budget = (params.encoder_query_tokens as f64 / Truncation::default().subword_multiplier)
            .floor() as usize;
        let encoder_query = truncate_words(query, budget);
        let truncated = encoder_query.len() < query.trim().len();
        if truncated {
            log::info!("retrieval query truncated to {budget} words for the encoders");
        }

        let mut trace = RetrievalTrace {
            variant,
            query: query.to_string(),
            encoder_query_truncated: truncated,
            stages: Vec::new(),
        };
        let record = |trace: &mut RetrievalTrace, stage: &str, out: &[ScoredPassage], t: Instant| {
            trace.stages.push(StageRecord {
                stage: stage.to_string(),
                output: out.iter().map(|p| (p.chunk_id.clone(), p.score)).collect(),
                elapsed_ms: t.elapsed().as_secs_f64() * 1e3,
            });
        };

        let k = params.final_depth;
        let sparse_stage = |trace: &mut RetrievalTrace, depth: usize| -> Result<Vec<ScoredPassage>> {
            let t = Instant::now();
            let out = self
                .require_sparse()?
                .sparse_search(providers.sparse.as_ref(), encoder_query, depth)
                .map_err(|e| Error::stage("sparse", e))?;
            record(trace, "sparse", &out, t);
            Ok(out)
        };
        let dense_stage = |trace: &mut RetrievalTrace, depth: usize| -> Result<Vec<ScoredPassage>> {
            let t = Instant::now();
            let out = self
                .require_dense()?
                .dense_search(providers.dense.as_ref(), encoder_query, depth)
                .map_err(|e| Error::stage("dense", e))?;
            record(trace, "dense", &out, t);
            Ok(out)
        };
        let rerank_stage = |trace: &mut RetrievalTrace, cands: Vec<ScoredPassage>| -> Result<Vec<ScoredPassage>> {
            let t = Instant::now();
            let out = rerank(query, cands, providers.scorer.as_ref(), k)
                .map_err(|e| Error::stage("rerank", e))?;
            record(trace, "rerank", &out, t);
            Ok(out)
        };

        let out = match variant {
            RetrieverVariant::Bm25 => {
                let t = Instant::now();
                let out = self.require_sparse()?.bm25_search(query, k, params);
                record(&mut trace, "bm25", &out, t);
                out
            }
            RetrieverVariant::Sparse => sparse_stage(&mut trace, k)?,
            RetrieverVariant::Dense => dense_stage(&mut trace, k)?,
            RetrieverVariant::SparseDense => {
                let s = sparse_stage(&mut trace, params.sparse_depth)?;
                let d = dense_stage(&mut trace, params.dense_depth)?;
                let t = Instant::now();
                let out = interleave(&s, &d, k);
                record(&mut trace, "interleave", &out, t);
                out
            }
            RetrieverVariant::SparseRerank => {
                let s = sparse_stage(&mut trace, params.sparse_depth)?;
                rerank_stage(&mut trace, s)?
            }
            RetrieverVariant::DenseRerank => {
                let d = dense_stage(&mut trace, params.dense_depth)?;
                rerank_stage(&mut trace, d)?
            }
            RetrieverVariant::Hybrid => {
                let s = sparse_stage(&mut trace, params.sparse_depth)?;
                let d = dense_stage(&mut trace, params.dense_depth)?;
                let t = Instant::now();
                let fused = fuse(&s, &d);
                record(&mut trace, "fuse", &fused, t);
                rerank_stage(&mut trace, fused)?
            }
        };
        Ok((out, trace))
    }
}
