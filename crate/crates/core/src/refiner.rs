//! Two-tier evidence refinement: a passage-level relevance filter, then
//! sentence-boundary decomposition, a segment-level usefulness filter and
//! recomposition.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::{ChatProvider, ChatRequest};
use crate::retrieval::ScoredPassage;
use crate::templates::{TemplateId, TemplateSet};
use crate::text::{word_count, LanguageTag, SentenceSplitter};

pub const MIN_SEGMENT_WORDS: usize = 20;
pub const MAX_SEGMENT_WORDS: usize = 80;
/// Separator between recomposed segments.
pub const SEGMENT_JOIN: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub source_chunk_id: String,
    pub text: String,
    pub word_count: usize,
    /// Sentence ordinals within the source passage.
    pub span: Range<usize>,
    /// A single sentence longer than the segment cap.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub chunk_id: String,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RefinedKnowledge {
    pub segments: Vec<Segment>,
    pub text: String,
    pub provenance: Vec<Provenance>,
    /// Nothing survived; the reader answers without evidence.
    pub empty_evidence: bool,
    /// Ids of passages the relevance filter kept, in input order.
    pub relevant_passages: Vec<String>,
    pub warnings: Vec<String>,
}

impl RefinedKnowledge {
    fn from_segments(segments: Vec<Segment>, relevant_passages: Vec<String>, warnings: Vec<String>) -> Self {
        let text = segments
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(SEGMENT_JOIN);
        let provenance = segments
            .iter()
            .map(|s| Provenance {
                chunk_id: s.source_chunk_id.clone(),
                span: s.span.clone(),
            })
            .collect();
        Self {
            empty_evidence: segments.is_empty(),
            segments,
            text,
            provenance,
            relevant_passages,
            warnings,
        }
    }

    /// Evidence as retrieved, one segment per passage, no filtering.
    pub fn unrefined(passages: &[ScoredPassage], splitter: &SentenceSplitter) -> Self {
        let segments = passages
            .iter()
            .filter(|p| !p.text.trim().is_empty())
            .map(|p| {
                let lang = LanguageTag::detect(&p.text);
                Segment {
                    source_chunk_id: p.chunk_id.clone(),
                    text: p.text.trim().to_string(),
                    word_count: word_count(&p.text, lang),
                    span: 0..splitter.split(&p.text, lang).len(),
                    flagged: false,
                }
            })
            .collect();
        let ids = passages.iter().map(|p| p.chunk_id.clone()).collect();
        Self::from_segments(segments, ids, Vec::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineToggles {
    pub relevance: bool,
    pub usefulness: bool,
}

impl Default for RefineToggles {
    fn default() -> Self {
        Self {
            relevance: true,
            usefulness: true,
        }
    }
}

impl RefineToggles {
    pub fn off() -> Self {
        Self {
            relevance: false,
            usefulness: false,
        }
    }

    pub fn any(&self) -> bool {
        self.relevance || self.usefulness
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutcome<T> {
    pub retained: Vec<T>,
    pub dropped: Vec<T>,
    pub warnings: Vec<String>,
}

/// Leading Yes/No of a filter completion, case-insensitive, ignoring
/// leading punctuation and markup.
pub fn parse_judgment(completion: &str) -> Option<bool> {
    let word: String = completion
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn judge<T: Clone + Send + Sync>(
    items: &[T],
    chat: &dyn ChatProvider,
    templates: &TemplateSet,
    template: TemplateId,
    question: &str,
    text_of: impl Fn(&T) -> (&str, &str) + Sync,
) -> Result<FilterOutcome<T>> {
    let verdicts: Vec<Result<(Option<bool>, String)>> = items
        .par_iter()
        .map(|item| {
            let (id, text) = text_of(item);
            let req = ChatRequest::from_template(
                templates.get(template),
                &[("passage", text), ("question", question)],
            )?;
            let out = chat
                .chat(&req)
                .map_err(|e| Error::context(format!("{template} judgment for {id}"), e))?;
            Ok((parse_judgment(&out), out))
        })
        .collect();
    let mut outcome = FilterOutcome {
        retained: Vec::new(),
        dropped: Vec::new(),
        warnings: Vec::new(),
    };
    for (item, verdict) in items.iter().zip(verdicts) {
        let (parsed, raw) = verdict?;
        match parsed {
            Some(true) => outcome.retained.push(item.clone()),
            Some(false) => outcome.dropped.push(item.clone()),
            None => {
                let id = text_of(item).0;
                log::warn!("unparseable {template} judgment for {id}, retaining");
                outcome
                    .warnings
                    .push(format!("{template}: unparseable judgment for {id}: {raw:?}"));
                outcome.retained.push(item.clone());
            }
        }
    }
    Ok(outcome)
}

/// Judge each passage independently with the relevance template.
pub fn relevance_filter(
    question: &str,
    passages: &[ScoredPassage],
    chat: &dyn ChatProvider,
    templates: &TemplateSet,
) -> Result<FilterOutcome<ScoredPassage>> {
    judge(passages, chat, templates, TemplateId::Relevance, question, |p| {
        (p.chunk_id.as_str(), p.text.as_str())
    })
}

/// Judge each segment independently with the usefulness template.
pub fn usefulness_filter(
    question: &str,
    segments: &[Segment],
    chat: &dyn ChatProvider,
    templates: &TemplateSet,
) -> Result<FilterOutcome<Segment>> {
    judge(segments, chat, templates, TemplateId::Usefulness, question, |s| {
        (s.source_chunk_id.as_str(), s.text.as_str())
    })
}

/// Split one passage into segments: sentences merge left to right while the
/// running segment is under `min_words` and the merge stays within
/// `max_words`.
pub fn decompose_passage(
    chunk_id: &str,
    text: &str,
    splitter: &SentenceSplitter,
    min_words: usize,
    max_words: usize,
) -> Vec<Segment> {
    let lang = LanguageTag::detect(text);
    let sentences = splitter.split(text, lang);
    let mut out: Vec<Segment> = Vec::new();
    // (byte range, sentence ordinals, words)
    let mut cur: Option<(Range<usize>, Range<usize>, usize)> = None;
    for (i, r) in sentences.into_iter().enumerate() {
        let wc = word_count(&text[r.clone()], lang);
        match &mut cur {
            Some((bytes, span, words)) if *words < min_words && *words + wc <= max_words => {
                bytes.end = r.end;
                span.end = i + 1;
                *words += wc;
            }
            _ => {
                if let Some(done) = cur.take() {
                    out.push(segment(chunk_id, text, done, max_words));
                }
                cur = Some((r, i..i + 1, wc));
            }
        }
    }
    if let Some(done) = cur {
        out.push(segment(chunk_id, text, done, max_words));
    }
    out
}

fn segment(chunk_id: &str, text: &str, (bytes, span, words): (Range<usize>, Range<usize>, usize), max_words: usize) -> Segment {
    Segment {
        source_chunk_id: chunk_id.to_string(),
        text: text[bytes].to_string(),
        word_count: words,
        flagged: words > max_words,
        span,
    }
}

/// Decompose every passage with the default thresholds.
pub fn decompose(passages: &[ScoredPassage], splitter: &SentenceSplitter) -> Vec<Segment> {
    passages
        .iter()
        .flat_map(|p| decompose_passage(&p.chunk_id, &p.text, splitter, MIN_SEGMENT_WORDS, MAX_SEGMENT_WORDS))
        .collect()
}

/// Relevance filter, decompose, usefulness filter, recompose. A disabled
/// filter keeps everything without calling the provider.
pub fn refine(
    question: &str,
    passages: &[ScoredPassage],
    chat: &dyn ChatProvider,
    templates: &TemplateSet,
    toggles: RefineToggles,
    splitter: &SentenceSplitter,
) -> Result<RefinedKnowledge> {
    let mut warnings = Vec::new();
    let relevant = if toggles.relevance && !passages.is_empty() {
        let o = relevance_filter(question, passages, chat, templates)
            .map_err(|e| Error::stage("relevance", e))?;
        warnings.extend(o.warnings);
        o.retained
    } else {
        passages.to_vec()
    };
    let segments = decompose(&relevant, splitter);
    let useful = if toggles.usefulness && !segments.is_empty() {
        let o = usefulness_filter(question, &segments, chat, templates)
            .map_err(|e| Error::stage("usefulness", e))?;
        warnings.extend(o.warnings);
        o.retained
    } else {
        segments
    };
    let ids = relevant.into_iter().map(|p| p.chunk_id).collect();
    Ok(RefinedKnowledge::from_segments(useful, ids, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{MockChat, Unavailable};
    use crate::retrieval::Stage;

    fn words(n: usize, end: &str) -> String {
        let mut s = vec!["w"; n].join(" ");
        s.push_str(end);
        s
    }

    fn passage(id: &str, text: &str) -> ScoredPassage {
        ScoredPassage {
            chunk_id: id.into(),
            text: text.into(),
            score: 0.0,
            stage: Stage::Reranked,
        }
    }

    fn counts(segs: &[Segment]) -> Vec<usize> {
        segs.iter().map(|s| s.word_count).collect()
    }

    #[test]
    fn greedy_hand_trace() {
        let text = format!("{} {} {}", words(15, "."), words(15, "."), words(60, "."));
        let segs = decompose_passage("p", &text, &SentenceSplitter::default(), 20, 80);
        assert_eq!(counts(&segs), vec![30, 60]);
        assert_eq!(segs[0].span, 0..2);
        assert_eq!(segs[1].span, 2..3);
    }

    #[test]
    fn long_sentence_flagged() {
        let text = format!("{} {}", words(95, "."), words(5, "."));
        let segs = decompose_passage("p", &text, &SentenceSplitter::default(), 20, 80);
        assert_eq!(counts(&segs), vec![95, 5]);
        assert!(segs[0].flagged && !segs[1].flagged);
    }

    #[test]
    fn single_short_sentence() {
        let segs = decompose_passage("p", &words(10, "."), &SentenceSplitter::default(), 20, 80);
        assert_eq!(counts(&segs), vec![10]);
    }

    #[test]
    fn judgment_parsing() {
        assert_eq!(parse_judgment("Yes."), Some(true));
        assert_eq!(parse_judgment("  **no** because"), Some(false));
        assert_eq!(parse_judgment("YES"), Some(true));
        assert_eq!(parse_judgment("Yesterday"), None);
        assert_eq!(parse_judgment("maybe"), None);
        assert_eq!(parse_judgment(""), None);
    }

    #[test]
    fn always_yes_keeps_everything_in_order() {
        let chat = MockChat::new()
            .always(TemplateId::Relevance, "Yes")
            .always(TemplateId::Usefulness, "Yes");
        let ps = vec![passage("a", "First one. Second one."), passage("b", "Third.")];
        let r = refine("q", &ps, &chat, &TemplateSet::default(), RefineToggles::default(), &SentenceSplitter::default()).unwrap();
        assert_eq!(r.text, "First one. Second one.\n\nThird.");
        assert!(!r.empty_evidence);
    }

    #[test]
    fn always_no_relevance_gives_empty_evidence() {
        let chat = MockChat::new().always(TemplateId::Relevance, "No");
        let ps = vec![passage("a", "Something.")];
        let r = refine("q", &ps, &chat, &TemplateSet::default(), RefineToggles::default(), &SentenceSplitter::default()).unwrap();
        assert!(r.empty_evidence);
        assert_eq!(r.text, "");
    }

    #[test]
    fn unparseable_is_retained_with_warning() {
        let chat = MockChat::new()
            .always(TemplateId::Relevance, "perhaps")
            .always(TemplateId::Usefulness, "Yes");
        let ps = vec![passage("a", "Something.")];
        let r = refine("q", &ps, &chat, &TemplateSet::default(), RefineToggles::default(), &SentenceSplitter::default()).unwrap();
        assert_eq!(r.text, "Something.");
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn disabled_and_empty_make_no_calls() {
        let ps = vec![passage("a", "x.")];
        let t = TemplateSet::default();
        let s = SentenceSplitter::default();
        assert!(refine("q", &ps, &Unavailable, &t, RefineToggles::off(), &s).is_ok());
        assert!(refine("q", &[], &Unavailable, &t, RefineToggles::default(), &s).unwrap().empty_evidence);
    }

    #[test]
    fn provider_error_names_stage() {
        let ps = vec![passage("a", "x.")];
        let err = refine("q", &ps, &Unavailable, &TemplateSet::default(), RefineToggles::default(), &SentenceSplitter::default()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "relevance", .. }));
        assert!(err.to_string().contains("for a"));
    }
}
