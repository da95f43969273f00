//! Exact inner-product k-NN over a row-major matrix of chunk embeddings.
//!
//! Persisted as `matrix.f32` (little-endian, row-major), `ids.json` (chunk
//! id per row) and `meta.json`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{to_passages, top_positions, ScoredPassage, Stage};
use crate::corpus::ChunkStore;
use crate::error::{Error, Result};
use crate::providers::DenseEmbedder;

const ENCODE_BATCH: usize = 64;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    dimension: usize,
    rows: usize,
    store_digest: String,
}

#[derive(Debug, Clone)]
pub struct DenseIndex {
    store: Arc<ChunkStore>,
    dimension: usize,
    matrix: Vec<f32>,
}

impl DenseIndex {
    pub fn build(store: Arc<ChunkStore>, embedder: &dyn DenseEmbedder) -> Result<Self> {
        let dimension = embedder.dimension();
        let texts: Vec<&str> = store.chunks().iter().map(|c| c.text.as_str()).collect();
        let batches: Vec<Result<Vec<f32>>> = texts
            .par_chunks(ENCODE_BATCH)
            .enumerate()
            .map(|(b, batch)| {
                let vecs = embedder.embed_dense(batch).map_err(|e| Error::Encoder {
                    chunk_id: store.chunks()[b * ENCODE_BATCH].chunk_id.clone(),
                    source: Box::new(e),
                })?;
                if vecs.len() != batch.len() {
                    return Err(Error::Contract("embedder output length mismatch".into()));
                }
                let mut rows = Vec::with_capacity(batch.len() * dimension);
                for v in vecs {
                    if v.len() != dimension {
                        return Err(Error::Contract(format!(
                            "embedding has {} entries, index dimension is {dimension}",
                            v.len()
                        )));
                    }
                    rows.extend_from_slice(v.values());
                }
                Ok(rows)
            })
            .collect();
        let mut matrix = Vec::with_capacity(texts.len() * dimension);
        for b in batches {
            matrix.extend(b?);
        }
        Ok(Self {
            store,
            dimension,
            matrix,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn rows(&self) -> usize {
        self.store.len()
    }

    pub fn row(&self, pos: usize) -> &[f32] {
        &self.matrix[pos * self.dimension..(pos + 1) * self.dimension]
    }

    pub fn dense_search(
        &self,
        embedder: &dyn DenseEmbedder,
        query: &str,
        depth: usize,
    ) -> Result<Vec<ScoredPassage>> {
        let q = embedder
            .embed_dense(&[query])?
            .pop()
            .ok_or_else(|| Error::Contract("empty embedder output".into()))?;
        if q.len() != self.dimension {
            return Err(Error::Contract(format!(
                "query vector dimension {} does not match index dimension {}",
                q.len(),
                self.dimension
            )));
        }
        if depth == 0 || self.store.is_empty() {
            return Ok(Vec::new());
        }
        let scores: Vec<(usize, f64)> = (0..self.rows())
            .into_par_iter()
            .map(|pos| (pos, q.dot(self.row(pos))))
            .collect();
        Ok(to_passages(&self.store, top_positions(scores, depth), Stage::Dense))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = Meta {
            dimension: self.dimension,
            rows: self.rows(),
            store_digest: self.store.content_digest(),
        };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
        let ids: Vec<&str> = self.store.chunks().iter().map(|c| c.chunk_id.as_str()).collect();
        let path = dir.join("ids.json");
        fs::write(&path, serde_json::to_vec(&ids)?).map_err(|e| Error::io(&path, e))?;
        let bytes: Vec<u8> = self.matrix.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join("matrix.f32");
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, store: Arc<ChunkStore>) -> Result<Self> {
        let path = dir.join("meta.json");
        let meta: Meta =
            serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        if meta.rows != store.len() || meta.store_digest != store.content_digest() {
            return Err(Error::Data("dense index was built over a different chunk store".into()));
        }
        let path = dir.join("ids.json");
        let ids: Vec<String> =
            serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        if ids.iter().zip(store.chunks()).any(|(a, c)| *a != c.chunk_id) {
            return Err(Error::Data("dense id map disagrees with chunk store".into()));
        }
        let path = dir.join("matrix.f32");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != meta.rows * meta.dimension * 4 {
            return Err(Error::Data("matrix.f32 has unexpected size".into()));
        }
        let matrix: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4")))
            .collect();
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("matrix.f32 has non-finite entries".into()));
        }
        Ok(Self {
            store,
            dimension: meta.dimension,
            matrix,
        })
    }
}
