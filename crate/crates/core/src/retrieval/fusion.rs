use std::collections::{BTreeMap, HashSet};

use super::{ScoredPassage, Stage};

/// Union of two result lists by chunk_id. Input scores are dropped (set to
/// zero) since reranking rescores every passage; output is in ascending
/// chunk_id order.
pub fn fuse(sparse: &[ScoredPassage], dense: &[ScoredPassage]) -> Vec<ScoredPassage> {
    let mut union: BTreeMap<&str, &ScoredPassage> = BTreeMap::new();
    for p in sparse.iter().chain(dense) {
        union.entry(p.chunk_id.as_str()).or_insert(p);
    }
    union
        .into_values()
        .map(|p| ScoredPassage {
            chunk_id: p.chunk_id.clone(),
            text: p.text.clone(),
            score: 0.0,
            stage: Stage::Fused,
        })
        .collect()
}

/// Round-robin interleaving by rank, first list first, skipping
/// duplicates, truncated to `depth`. Used when two retrievers are combined
/// without a reranker; the score is `1 / (output rank + 1)`.
pub fn interleave(first: &[ScoredPassage], second: &[ScoredPassage], depth: usize) -> Vec<ScoredPassage> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let longest = first.len().max(second.len());
    for r in 0..longest {
        for list in [first, second] {
            if let Some(p) = list.get(r) {
                if out.len() < depth && seen.insert(p.chunk_id.as_str()) {
                    out.push(ScoredPassage {
                        chunk_id: p.chunk_id.clone(),
                        text: p.text.clone(),
                        score: 1.0 / (out.len() + 1) as f64,
                        stage: Stage::Fused,
                    });
                }
            }
        }
    }
    out
}
