//! Reader prompting, multiple-choice answer parsing and the end-to-end
//! pipeline.

mod pipeline;

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::ChatRequest;
use crate::refiner::RefinedKnowledge;
use crate::templates::{TemplateId, TemplateSet};
use crate::text::{LanguageTag, SentenceSplitter};

pub use pipeline::{AnswerTrace, Pipeline, StageToggles, StageTrace};

/// Knowledge slot content when no evidence survived.
pub const NO_EVIDENCE: &str = "None.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Usmle,
    Mcmle,
    Medmcqa,
}

impl DatasetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Usmle => "usmle",
            DatasetTag::Mcmle => "mcmle",
            DatasetTag::Medmcqa => "medmcqa",
        }
    }
}

impl std::str::FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "usmle" => Ok(DatasetTag::Usmle),
            "mcmle" => Ok(DatasetTag::Mcmle),
            "medmcqa" => Ok(DatasetTag::Medmcqa),
            _ => Err(Error::Config(vec![format!(
                "unknown dataset tag {s:?}; expected usmle, mcmle or medmcqa"
            )])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McQuestion {
    pub question_id: String,
    pub stem: String,
    /// Label to option text, in label order.
    pub options: BTreeMap<String, String>,
    pub gold: String,
    pub dataset_tag: DatasetTag,
}

impl McQuestion {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        if self.question_id.trim().is_empty() {
            v.push(("question_id", "must be nonempty".to_string()));
        }
        if self.stem.trim().is_empty() {
            v.push(("stem", "must be nonempty".to_string()));
        }
        if self.options.len() < 2 {
            v.push(("options", "need at least two options".to_string()));
        }
        if let Some(bad) = self
            .options
            .keys()
            .find(|k| !(k.len() == 1 && k.as_bytes()[0].is_ascii_uppercase()))
        {
            v.push(("options", format!("label {bad:?} is not a single capital letter")));
        }
        if !self.options.contains_key(&self.gold) {
            v.push(("gold", format!("{:?} is not an option label", self.gold)));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            None => Ok(()),
            Some((field, msg)) => Err(Error::Contract(format!(
                "question {}: {field} {msg}",
                self.question_id
            ))),
        }
    }

    /// Stem followed by one `A) text` line per option.
    pub fn formatted(&self) -> String {
        let mut s = self.stem.trim_end().to_string();
        for (label, text) in &self.options {
            s.push('\n');
            s.push_str(label);
            s.push_str(") ");
            s.push_str(text);
        }
        s
    }

    pub fn is_label(&self, label: &str) -> bool {
        self.options.contains_key(label)
    }
}

/// Which rule of the parse cascade produced the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsePath {
    AnswerPhrase,
    FinalLineLabel,
    OptionText,
    Ambiguous,
    Unparsed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub raw_completion: String,
    pub parsed_label: Option<String>,
    pub confidence_note: ParsePath,
}

impl Answer {
    pub fn is_correct(&self, question: &McQuestion) -> bool {
        self.parsed_label.as_deref() == Some(question.gold.as_str())
    }
}

pub fn build_reader_prompt(
    refined: &RefinedKnowledge,
    question: &McQuestion,
    templates: &TemplateSet,
) -> Result<ChatRequest> {
    question.validate()?;
    let knowledge = if refined.text.trim().is_empty() {
        NO_EVIDENCE
    } else {
        refined.text.as_str()
    };
    ChatRequest::from_template(
        templates.get(TemplateId::Reader),
        &[("knowledge", knowledge), ("question", &question.formatted())],
    )
}

static ANSWER_PHRASE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i:answer\s+is|answer\s*:)\s*(?i:option\s+|choice\s+)?[\(\[*]*([A-Z])(?:[\)\]\.:,;*]|\s|$)")
        .expect("valid regex")
});
static BARE_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[\(\[]?([A-Z])[\)\]\.:]?$").expect("valid regex"));
static DECORATED_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:(?:\(([A-Z])\)|\[([A-Z])\])[,;\.:!?]?|([A-Z])[\)\.:][,;]?)$").expect("valid regex")
});

fn unique<'a>(labels: impl Iterator<Item = &'a str>) -> Result<Option<&'a str>, ()> {
    let mut found: Option<&str> = None;
    for l in labels {
        match found {
            None => found = Some(l),
            Some(f) if f == l => {}
            Some(_) => return Err(()),
        }
    }
    Ok(found)
}

/// Parse cascade: "answer is X" / "Answer: X"; a lone or decorated label on
/// the final line; a unique option text in the final sentence. Two
/// different labels at any rule make the answer ambiguous.
pub fn parse_mc_answer(completion: &str, question: &McQuestion) -> Answer {
    let done = |label: Option<&str>, path| Answer {
        raw_completion: completion.to_string(),
        parsed_label: label.map(str::to_string),
        confidence_note: path,
    };

    let phrase = ANSWER_PHRASE
        .captures_iter(completion)
        .filter_map(|c| c.get(1).map(|m| m.as_str()))
        .filter(|l| question.is_label(l));
    match unique(phrase) {
        Ok(Some(l)) => return done(Some(l), ParsePath::AnswerPhrase),
        Err(()) => return done(None, ParsePath::Ambiguous),
        Ok(None) => {}
    }

    let last_line = completion
        .lines()
        .map(str::trim)
        .rfind(|l| !l.is_empty())
        .unwrap_or("");
    let stripped = last_line.trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace());
    if let Some(c) = BARE_LABEL.captures(stripped) {
        let l = c.get(1).expect("group").as_str();
        if question.is_label(l) {
            return done(Some(l), ParsePath::FinalLineLabel);
        }
    }
    let decorated = last_line
        .split_whitespace()
        .map(|t| t.trim_matches('*'))
        .filter_map(|t| {
            let c = DECORATED_LABEL.captures(t)?;
            c.iter().skip(1).flatten().next().map(|m| m.as_str())
        })
        .filter(|l| question.is_label(l));
    match unique(decorated) {
        Ok(Some(l)) => return done(Some(l), ParsePath::FinalLineLabel),
        Err(()) => return done(None, ParsePath::Ambiguous),
        Ok(None) => {}
    }

    let lang = LanguageTag::detect(completion);
    let sentences = SentenceSplitter::default().sentences(completion, lang);
    let final_sentence = sentences.last().copied().unwrap_or("").to_lowercase();
    let hits: Vec<(&String, String)> = question
        .options
        .iter()
        .map(|(l, t)| (l, t.trim().to_lowercase()))
        .filter(|(_, t)| !t.is_empty() && final_sentence.contains(t.as_str()))
        .collect();
    // an option contained in a longer matching option is not a separate hit
    let maximal: Vec<&String> = hits
        .iter()
        .filter(|(_, t)| !hits.iter().any(|(_, o)| o.len() > t.len() && o.contains(t.as_str())))
        .map(|(l, _)| *l)
        .collect();
    match maximal.as_slice() {
        [l] => done(Some(l), ParsePath::OptionText),
        [] => done(None, ParsePath::Unparsed),
        _ => done(None, ParsePath::Ambiguous),
    }
}
