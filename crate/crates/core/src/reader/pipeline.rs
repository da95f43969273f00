use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_reader_prompt, parse_mc_answer, Answer, McQuestion};
use crate::augmenter::{augment, AugmentToggles, AugmentedQuery};
use crate::error::{Error, Result};
use crate::providers::{sha256_hex, Providers};
use crate::refiner::{refine, RefineToggles, RefinedKnowledge};
use crate::retrieval::{HybridIndex, RetrievalParams, RetrievalTrace, RetrieverVariant, ScoredPassage};
use crate::templates::TemplateSet;
use crate::text::SentenceSplitter;

/// Which pipeline stages run. `retriever: None` means no retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    pub rewrite: bool,
    pub expand: bool,
    pub retriever: Option<RetrieverVariant>,
    pub relevance: bool,
    pub usefulness: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            rewrite: true,
            expand: true,
            retriever: Some(RetrieverVariant::Hybrid),
            relevance: true,
            usefulness: true,
        }
    }
}

impl StageToggles {
    pub fn closed_book() -> Self {
        Self {
            rewrite: false,
            expand: false,
            retriever: None,
            relevance: false,
            usefulness: false,
        }
    }

    /// Toggle the three components as units.
    pub fn components(augmenter: bool, retriever: Option<RetrieverVariant>, refiner: bool) -> Self {
        Self {
            rewrite: augmenter,
            expand: augmenter,
            retriever,
            relevance: refiner,
            usefulness: refiner,
        }
    }

    pub fn augment(&self) -> AugmentToggles {
        AugmentToggles {
            rewrite: self.rewrite,
            expand: self.expand,
        }
    }

    pub fn refine(&self) -> RefineToggles {
        RefineToggles {
            relevance: self.relevance,
            usefulness: self.usefulness,
        }
    }

    /// Stage names in execution order.
    pub fn plan(&self) -> Vec<&'static str> {
        let mut p = Vec::new();
        if self.rewrite || self.expand {
            p.push("augment");
        }
        if self.retriever.is_some() {
            p.push("retrieve");
        }
        if self.relevance || self.usefulness {
            p.push("refine");
        }
        p.push("read");
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: String,
    pub input_digest: String,
    pub output_digest: String,
    /// Excluded from [`AnswerTrace::digest`].
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub question_id: String,
    pub stages: Vec<StageTrace>,
    pub augmented: Option<AugmentedQuery>,
    pub retrieval: Option<RetrievalTrace>,
    pub refined: Option<RefinedKnowledge>,
    pub reader_prompt: Option<String>,
    pub error: Option<String>,
}

impl AnswerTrace {
    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.stage.as_str()).collect()
    }

    /// Digest of stage names and input/output digests; timings excluded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.question_id.as_bytes());
        for s in &self.stages {
            h.update([0]);
            h.update(s.stage.as_bytes());
            h.update(s.input_digest.as_bytes());
            h.update(s.output_digest.as_bytes());
        }
        if let Some(e) = &self.error {
            h.update([1]);
            h.update(e.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn record<T: Serialize>(&mut self, stage: &str, input: &str, output: &T, started: Instant) {
        let out = serde_json::to_vec(output).unwrap_or_default();
        self.stages.push(StageTrace {
            stage: stage.to_string(),
            input_digest: sha256_hex(input.as_bytes()),
            output_digest: sha256_hex(&out),
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
}

/// Everything needed to answer one question.
#[derive(Clone)]
pub struct Pipeline {
    pub providers: Providers,
    pub index: Option<Arc<HybridIndex>>,
    pub templates: TemplateSet,
    pub params: RetrievalParams,
    pub stages: StageToggles,
    pub splitter: SentenceSplitter,
}

impl Pipeline {
    pub fn new(providers: Providers, index: Option<Arc<HybridIndex>>, stages: StageToggles) -> Self {
        Self {
            providers,
            index,
            templates: TemplateSet::default(),
            params: RetrievalParams::default(),
            stages,
            splitter: SentenceSplitter::default(),
        }
    }

    pub fn with_stages(&self, stages: StageToggles) -> Self {
        Self {
            stages,
            ..self.clone()
        }
    }

    /// Run augment, retrieve, refine and read as toggled. The trace covers
    /// every stage up to a failure.
    pub fn answer(&self, question: &McQuestion) -> (AnswerTrace, Result<Answer>) {
        let mut trace = AnswerTrace {
            question_id: question.question_id.clone(),
            ..Default::default()
        };
        let result = self.run(question, &mut trace);
        if let Err(e) = &result {
            trace.error = Some(e.to_string());
        }
        (trace, result)
    }

    fn run(&self, question: &McQuestion, trace: &mut AnswerTrace) -> Result<Answer> {
        question.validate()?;
        let text = question.formatted();
        let s = self.stages;

        let query = if s.rewrite || s.expand {
            let t = Instant::now();
            let q = augment(&text, self.providers.chat.as_ref(), &self.templates, s.augment())
                .map_err(|e| Error::stage("augment", e))?;
            trace.record("augment", &text, &q, t);
            let c = q.concatenated.clone();
            trace.augmented = Some(q);
            c
        } else {
            text.clone()
        };

        let passages: Vec<ScoredPassage> = match s.retriever {
            Some(variant) => {
                let t = Instant::now();
                let index = self.index.as_ref().ok_or_else(|| {
                    Error::stage("retrieve", Error::Contract("retrieval enabled but no index loaded".into()))
                })?;
                let (hits, rt) = index
                    .retrieve(&self.providers, &query, &self.params, variant)
                    .map_err(|e| Error::stage("retrieve", e))?;
                trace.record("retrieve", &query, &hits, t);
                trace.retrieval = Some(rt);
                hits
            }
            None => Vec::new(),
        };

        let refined = if s.relevance || s.usefulness {
            let t = Instant::now();
            let r = refine(
                &text,
                &passages,
                self.providers.chat.as_ref(),
                &self.templates,
                s.refine(),
                &self.splitter,
            )
            .map_err(|e| Error::stage("refine", e))?;
            let input = serde_json::to_string(&passages)?;
            trace.record("refine", &input, &r, t);
            r
        } else {
            RefinedKnowledge::unrefined(&passages, &self.splitter)
        };

        let t = Instant::now();
        let request = build_reader_prompt(&refined, question, &self.templates)?;
        trace.reader_prompt = Some(request.filled_prompt.clone());
        trace.refined = Some(refined);
        let completion = self
            .providers
            .chat
            .chat(&request)
            .map_err(|e| Error::stage("read", e))?;
        let answer = parse_mc_answer(&completion, question);
        trace.record("read", &request.filled_prompt, &answer, t);
        Ok(answer)
    }
}
