//! Inverted index over sparse term weights, plus the raw term frequencies
//! BM25 needs.
//!
//! Impact weights are quantized linearly against the largest weight in the
//! index: `q = clamp(round(255 * w / max), 1, 255)`, dequantized as
//! `q * max / 255`. Zero is never stored, so a posting implies a positive
//! weight, and the round-trip error is at most `max / 255`.
//!
//! Layout of a persisted index directory:
//!
//! - `meta.json`: format version, max weight, chunk count, store digest
//! - `impact.postings`: `(u32 position, u8 weight)` records
//! - `impact.offsets`: `(u32 term id, u64 first record, u32 length)` per term
//! - `lexical.postings`: `(u32 position, u32 tf)` records
//! - `lexical.terms.jsonl`: `{"term", "start", "len"}` per term
//! - `norms.bin`: u32 term count per chunk

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{to_passages, top_positions, RetrievalParams, ScoredPassage, Stage};
use crate::corpus::ChunkStore;
use crate::error::{Error, Result};
use crate::providers::{SparseEncoder, SparseWeights};
use crate::text;

const FORMAT_VERSION: u32 = 1;
const ENCODE_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ImpactPosting {
    pos: u32,
    weight: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TermPosting {
    pos: u32,
    tf: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    max_weight: f32,
    chunk_count: usize,
    store_digest: String,
}

#[derive(Debug, Clone)]
pub struct SparseIndex {
    store: Arc<ChunkStore>,
    impact: HashMap<u32, Vec<ImpactPosting>>,
    max_weight: f32,
    lexical: HashMap<String, Vec<TermPosting>>,
    doc_lens: Vec<u32>,
    avg_len: f64,
}

pub fn quantize(weight: f32, max_weight: f32) -> u8 {
    let q = (f64::from(weight) / f64::from(max_weight) * 255.0).round();
    q.clamp(1.0, 255.0) as u8
}

pub fn dequantize(q: u8, max_weight: f32) -> f64 {
    f64::from(q) * f64::from(max_weight) / 255.0
}

/// Encode every chunk; a failing batch is re-encoded chunk by chunk to
/// name the offending chunk.
fn encode_all(store: &ChunkStore, encoder: &dyn SparseEncoder) -> Result<Vec<SparseWeights>> {
    let texts: Vec<&str> = store.chunks().iter().map(|c| c.text.as_str()).collect();
    let batches: Vec<Result<Vec<SparseWeights>>> = texts
        .par_chunks(ENCODE_BATCH)
        .enumerate()
        .map(|(b, batch)| {
            encoder.embed_sparse(batch).and_then(|out| {
                if out.len() == batch.len() {
                    Ok(out)
                } else {
                    Err(Error::Contract("encoder output length mismatch".into()))
                }
            })
            .or_else(|_| {
                batch
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        encoder
                            .embed_sparse(&[t])
                            .and_then(|mut v| v.pop().ok_or_else(|| Error::Contract("empty encoder output".into())))
                            .map_err(|e| Error::Encoder {
                                chunk_id: store.chunks()[b * ENCODE_BATCH + i].chunk_id.clone(),
                                source: Box::new(e),
                            })
                    })
                    .collect()
            })
        })
        .collect();
    let mut out = Vec::with_capacity(texts.len());
    for b in batches {
        out.extend(b?);
    }
    Ok(out)
}

impl SparseIndex {
    pub fn build(store: Arc<ChunkStore>, encoder: &dyn SparseEncoder) -> Result<Self> {
        let encoded = if store.is_empty() {
            Vec::new()
        } else {
            encode_all(&store, encoder)?
        };
        let max_weight = encoded
            .iter()
            .flat_map(|w| w.entries().values().copied())
            .fold(0.0f32, f32::max);

        let mut impact: HashMap<u32, Vec<ImpactPosting>> = HashMap::new();
        for (pos, weights) in encoded.iter().enumerate() {
            for (&term, &w) in weights.entries() {
                impact.entry(term).or_default().push(ImpactPosting {
                    pos: pos as u32,
                    weight: quantize(w, max_weight),
                });
            }
        }

        let mut lexical: HashMap<String, Vec<TermPosting>> = HashMap::new();
        let mut doc_lens = Vec::with_capacity(store.len());
        for (pos, chunk) in store.chunks().iter().enumerate() {
            let terms = text::terms(&chunk.text);
            doc_lens.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                lexical.entry(t).or_default().push(TermPosting {
                    pos: pos as u32,
                    tf: n,
                });
            }
        }
        Ok(Self::assemble(store, impact, max_weight, lexical, doc_lens))
    }

    fn assemble(
        store: Arc<ChunkStore>,
        impact: HashMap<u32, Vec<ImpactPosting>>,
        max_weight: f32,
        lexical: HashMap<String, Vec<TermPosting>>,
        doc_lens: Vec<u32>,
    ) -> Self {
        let avg_len = if doc_lens.is_empty() {
            0.0
        } else {
            doc_lens.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lens.len() as f64
        };
        Self {
            store,
            impact,
            max_weight,
            lexical,
            doc_lens,
            avg_len,
        }
    }

    pub fn store(&self) -> &Arc<ChunkStore> {
        &self.store
    }

    pub fn max_weight(&self) -> f32 {
        self.max_weight
    }

    pub fn term_count(&self) -> usize {
        self.impact.len()
    }

    /// Dequantized postings of one term as (chunk position, weight).
    pub fn postings(&self, term: u32) -> Vec<(usize, f64)> {
        self.impact
            .get(&term)
            .map(|ps| {
                ps.iter()
                    .map(|p| (p.pos as usize, dequantize(p.weight, self.max_weight)))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Dot product of query weights with dequantized document weights.
    pub fn sparse_search(
        &self,
        encoder: &dyn SparseEncoder,
        query: &str,
        depth: usize,
    ) -> Result<Vec<ScoredPassage>> {
        if self.store.is_empty() || depth == 0 {
            return Ok(Vec::new());
        }
        let q = encoder
            .embed_sparse(&[query])?
            .pop()
            .ok_or_else(|| Error::Contract("empty encoder output".into()))?;
        Ok(to_passages(&self.store, self.score_weights(&q, depth), Stage::Sparse))
    }

    pub(crate) fn score_weights(&self, query: &SparseWeights, depth: usize) -> Vec<(usize, f64)> {
        let mut acc = vec![0.0f64; self.store.len()];
        let mut touched = Vec::new();
        for (term, &qw) in query.entries() {
            let Some(list) = self.impact.get(term) else {
                continue;
            };
            for p in list {
                let slot = &mut acc[p.pos as usize];
                if *slot == 0.0 {
                    touched.push(p.pos as usize);
                }
                *slot += f64::from(qw) * dequantize(p.weight, self.max_weight);
            }
        }
        let hits = touched.into_iter().map(|pos| (pos, acc[pos])).collect();
        top_positions(hits, depth)
    }

    /// Okapi BM25 over raw term frequencies, with
    /// `idf = ln(1 + (N - df + 0.5) / (df + 0.5))` and each distinct query
    /// term counted once.
    pub fn bm25_search(&self, query: &str, depth: usize, params: &RetrievalParams) -> Vec<ScoredPassage> {
        if self.store.is_empty() || depth == 0 {
            return Vec::new();
        }
        let n = self.store.len() as f64;
        let (k1, b) = (params.bm25_k1, params.bm25_b);
        let mut q_terms = text::terms(query);
        q_terms.sort();
        q_terms.dedup();

        let mut acc = vec![0.0f64; self.store.len()];
        let mut touched = Vec::new();
        for t in &q_terms {
            let Some(list) = self.lexical.get(t) else {
                continue;
            };
            let df = list.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for p in list {
                let pos = p.pos as usize;
                let tf = f64::from(p.tf);
                let len_norm = if self.avg_len > 0.0 {
                    f64::from(self.doc_lens[pos]) / self.avg_len
                } else {
                    0.0
                };
                let s = idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_norm));
                if acc[pos] == 0.0 {
                    touched.push(pos);
                }
                acc[pos] += s;
            }
        }
        let hits = touched.into_iter().map(|pos| (pos, acc[pos])).collect();
        to_passages(&self.store, top_positions(hits, depth), Stage::Bm25)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = Meta {
            format_version: FORMAT_VERSION,
            max_weight: self.max_weight,
            chunk_count: self.store.len(),
            store_digest: self.store.content_digest(),
        };
        write(dir, "meta.json", &serde_json::to_vec_pretty(&meta)?)?;

        let mut terms: Vec<&u32> = self.impact.keys().collect();
        terms.sort();
        let mut postings = Vec::new();
        let mut offsets = Vec::new();
        let mut start = 0u64;
        for term in terms {
            let list = &self.impact[term];
            offsets.extend_from_slice(&term.to_le_bytes());
            offsets.extend_from_slice(&start.to_le_bytes());
            offsets.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for p in list {
                postings.extend_from_slice(&p.pos.to_le_bytes());
                postings.push(p.weight);
            }
            start += list.len() as u64;
        }
        write(dir, "impact.postings", &postings)?;
        write(dir, "impact.offsets", &offsets)?;

        let mut words: Vec<&String> = self.lexical.keys().collect();
        words.sort();
        let mut lex = Vec::new();
        let mut lex_terms = Vec::new();
        let mut start = 0u64;
        for w in words {
            let list = &self.lexical[w];
            serde_json::to_writer(
                &mut lex_terms,
                &serde_json::json!({"term": w, "start": start, "len": list.len()}),
            )?;
            lex_terms.push(b'\n');
            for p in list {
                lex.extend_from_slice(&p.pos.to_le_bytes());
                lex.extend_from_slice(&p.tf.to_le_bytes());
            }
            start += list.len() as u64;
        }
        write(dir, "lexical.postings", &lex)?;
        write(dir, "lexical.terms.jsonl", &lex_terms)?;

        let norms: Vec<u8> = self.doc_lens.iter().flat_map(|l| l.to_le_bytes()).collect();
        write(dir, "norms.bin", &norms)
    }

    pub fn load(dir: &Path, store: Arc<ChunkStore>) -> Result<Self> {
        let meta: Meta = serde_json::from_slice(&read(dir, "meta.json")?)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported sparse index version {}", meta.format_version)));
        }
        if meta.chunk_count != store.len() || meta.store_digest != store.content_digest() {
            return Err(Error::Data("sparse index was built over a different chunk store".into()));
        }
        let n = store.len();
        let check_pos = |pos: u32| -> Result<u32> {
            if (pos as usize) < n {
                Ok(pos)
            } else {
                Err(Error::Data(format!("posting position {pos} out of range")))
            }
        };

        let postings = read(dir, "impact.postings")?;
        let offsets = read(dir, "impact.offsets")?;
        if offsets.len() % 16 != 0 || postings.len() % 5 != 0 {
            return Err(Error::Data("truncated impact postings".into()));
        }
        let mut impact = HashMap::new();
        for rec in offsets.chunks_exact(16) {
            let term = u32::from_le_bytes(rec[0..4].try_into().expect("4"));
            let start = u64::from_le_bytes(rec[4..12].try_into().expect("8")) as usize;
            let len = u32::from_le_bytes(rec[12..16].try_into().expect("4")) as usize;
            let bytes = postings
                .get(start * 5..(start + len) * 5)
                .ok_or_else(|| Error::Data("impact offset out of range".into()))?;
            let list = bytes
                .chunks_exact(5)
                .map(|p| {
                    Ok(ImpactPosting {
                        pos: check_pos(u32::from_le_bytes(p[0..4].try_into().expect("4")))?,
                        weight: p[4],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            impact.insert(term, list);
        }

        let lex = read(dir, "lexical.postings")?;
        let mut lexical = HashMap::new();
        let terms_path = dir.join("lexical.terms.jsonl");
        let terms_file = fs::File::open(&terms_path).map_err(|e| Error::io(&terms_path, e))?;
        #[derive(Deserialize)]
        struct LexTerm {
            term: String,
            start: usize,
            len: usize,
        }
        for line in BufReader::new(terms_file).lines() {
            let line = line.map_err(|e| Error::io(&terms_path, e))?;
            let t: LexTerm = serde_json::from_str(&line)?;
            let bytes = lex
                .get(t.start * 8..(t.start + t.len) * 8)
                .ok_or_else(|| Error::Data("lexical offset out of range".into()))?;
            let list = bytes
                .chunks_exact(8)
                .map(|p| {
                    Ok(TermPosting {
                        pos: check_pos(u32::from_le_bytes(p[0..4].try_into().expect("4")))?,
                        tf: u32::from_le_bytes(p[4..8].try_into().expect("4")),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            lexical.insert(t.term, list);
        }

        let norms = read(dir, "norms.bin")?;
        if norms.len() != n * 4 {
            return Err(Error::Data("norms.bin does not match chunk count".into()));
        }
        let doc_lens = norms
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4")))
            .collect();
        Ok(Self::assemble(store, impact, meta.max_weight, lexical, doc_lens))
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&path, e))
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::io(&path, e))
}
