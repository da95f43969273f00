use std::cmp::Ordering;

use super::{ScoredPassage, Stage};
use crate::error::{Error, Result};
use crate::providers::PairScorer;

/// Score every candidate with the cross-encoder and keep the best `depth`,
/// ties broken by ascending chunk_id.
pub fn rerank(
    query: &str,
    candidates: Vec<ScoredPassage>,
    scorer: &dyn PairScorer,
    depth: usize,
) -> Result<Vec<ScoredPassage>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<&str> = candidates.iter().map(|p| p.text.as_str()).collect();
    let scores = scorer
        .score_pairs(query, &texts)
        .map_err(|e| Error::context(format!("rerank for query {query:?}"), e))?;
    let mut out: Vec<ScoredPassage> = candidates
        .into_iter()
        .zip(scores)
        .map(|(p, score)| ScoredPassage {
            score,
            stage: Stage::Reranked,
            ..p
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    out.truncate(depth);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{MockDense, MockScorer, Unavailable};

    fn passage(id: &str, text: &str) -> ScoredPassage {
        ScoredPassage {
            chunk_id: id.into(),
            text: text.into(),
            score: 0.0,
            stage: Stage::Fused,
        }
    }

    #[test]
    fn single_candidate_always_returned() {
        let scorer = MockScorer::dense(MockDense::new(8, 0));
        let out = rerank("q", vec![passage("a", "zzz")], &scorer, 32).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].stage, Stage::Reranked);
    }

    #[test]
    fn empty_candidates() {
        assert!(rerank("q", vec![], &Unavailable, 3).unwrap().is_empty());
    }

    #[test]
    fn failure_carries_query() {
        let err = rerank("which drug", vec![passage("a", "x")], &Unavailable, 3).unwrap_err();
        assert!(err.to_string().contains("which drug"));
    }
}
