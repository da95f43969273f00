//! Weak-supervision training data for the retrievers: BM25 recalls judged
//! by whether they let the reader answer correctly.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RetrievalParams, SparseIndex};
use crate::error::{Error, Result};
use crate::providers::ChatProvider;
use crate::reader::{build_reader_prompt, parse_mc_answer, McQuestion};
use crate::refiner::RefinedKnowledge;
use crate::templates::TemplateSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub question_id: String,
    pub query: String,
    pub positives: Vec<String>,
    pub hard_negatives: Vec<String>,
    pub easy_negatives: Vec<String>,
    /// No recalled passage led the reader to the gold answer.
    pub empty_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MiningOutcome {
    pub examples: Vec<TrainingExample>,
    /// Questions the reader already answers without context.
    pub skipped_correct: Vec<String>,
}

fn reader_correct(
    question: &McQuestion,
    knowledge: &str,
    reader: &dyn ChatProvider,
    templates: &TemplateSet,
) -> Result<bool> {
    let refined = RefinedKnowledge {
        text: knowledge.to_string(),
        ..Default::default()
    };
    let req = build_reader_prompt(&refined, question, templates)?;
    let completion = reader.chat(&req)?;
    Ok(parse_mc_answer(&completion, question).is_correct(question))
}

fn question_rng(seed: u64, question_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(question_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// For every question the reader gets wrong closed-book, recall
/// `params.bm25_depth` passages and re-ask with each one as the only
/// knowledge. Easy negatives are drawn uniformly from the rest of the
/// corpus.
pub fn mine_training_examples(
    questions: &[McQuestion],
    index: &SparseIndex,
    reader: &dyn ChatProvider,
    templates: &TemplateSet,
    params: &RetrievalParams,
    seed: u64,
) -> Result<MiningOutcome> {
    params.validate()?;
    let store = index.store();
    let mut outcome = MiningOutcome::default();
    for q in questions {
        let ctx = |e| Error::context(format!("mining question {}", q.question_id), e);
        if reader_correct(q, "", reader, templates).map_err(ctx)? {
            outcome.skipped_correct.push(q.question_id.clone());
            continue;
        }
        let query = q.formatted();
        let recalled = index.bm25_search(&query, params.bm25_depth, params);
        let verdicts: Vec<Result<bool>> = recalled
            .par_iter()
            .map(|p| reader_correct(q, &p.text, reader, templates))
            .collect();
        let (mut positives, mut hard_negatives) = (Vec::new(), Vec::new());
        for (p, v) in recalled.iter().zip(verdicts) {
            if v.map_err(ctx)? {
                positives.push(p.chunk_id.clone());
            } else {
                hard_negatives.push(p.chunk_id.clone());
            }
        }

        let recalled_pos: std::collections::HashSet<usize> = recalled
            .iter()
            .filter_map(|p| store.position(&p.chunk_id))
            .collect();
        let pool: Vec<usize> = (0..store.len()).filter(|i| !recalled_pos.contains(i)).collect();
        let take = params.easy_negatives.min(pool.len());
        let mut rng = question_rng(seed, &q.question_id);
        let mut picked: Vec<usize> = sample(&mut rng, pool.len(), take).into_iter().map(|i| pool[i]).collect();
        picked.sort_unstable();
        let easy_negatives = picked
            .into_iter()
            .map(|i| store.chunks()[i].chunk_id.clone())
            .collect();

        outcome.examples.push(TrainingExample {
            question_id: q.question_id.clone(),
            query,
            empty_positive: positives.is_empty(),
            positives,
            hard_negatives,
            easy_negatives,
        });
    }
    Ok(outcome)
}
