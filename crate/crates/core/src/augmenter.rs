//! Query rewriting and expansion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::{ChatProvider, ChatRequest};
use crate::templates::{TemplateId, TemplateSet};

/// Joins the rewritten and expanded queries.
pub const SEPARATOR: &str = "\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentToggles {
    pub rewrite: bool,
    pub expand: bool,
}

impl Default for AugmentToggles {
    fn default() -> Self {
        Self {
            rewrite: true,
            expand: true,
        }
    }
}

impl AugmentToggles {
    pub fn off() -> Self {
        Self {
            rewrite: false,
            expand: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedQuery {
    pub original: String,
    pub rewritten: String,
    pub expanded: String,
    /// Retrieval text.
    pub concatenated: String,
    pub rewrite_ran: bool,
    pub expand_ran: bool,
    pub warnings: Vec<String>,
}

impl AugmentedQuery {
    /// No augmentation: every field is the question itself.
    pub fn passthrough(question: &str) -> Self {
        Self {
            original: question.to_string(),
            rewritten: question.to_string(),
            expanded: question.to_string(),
            concatenated: question.to_string(),
            rewrite_ran: false,
            expand_ran: false,
            warnings: Vec::new(),
        }
    }
}

/// A completion with leading and trailing whitespace removed, or `None` if
/// nothing is left.
fn ask(
    chat: &dyn ChatProvider,
    templates: &TemplateSet,
    id: TemplateId,
    question: &str,
) -> Result<Option<String>> {
    let req = ChatRequest::from_template(templates.get(id), &[("question", question)])?;
    let out = chat.chat(&req)?;
    let out = out.trim();
    Ok((!out.is_empty()).then(|| out.to_string()))
}

fn require_question(question: &str) -> Result<()> {
    if question.trim().is_empty() {
        return Err(Error::Contract("question must be nonempty".into()));
    }
    Ok(())
}

/// Returns the rewritten question and whether it fell back to the original.
pub fn rewrite(question: &str, chat: &dyn ChatProvider, templates: &TemplateSet) -> Result<(String, bool)> {
    require_question(question)?;
    Ok(match ask(chat, templates, TemplateId::Rewrite, question)? {
        Some(r) => (r, false),
        None => (question.to_string(), true),
    })
}

/// Returns the expansion, empty when the provider produced nothing.
pub fn expand(question: &str, chat: &dyn ChatProvider, templates: &TemplateSet) -> Result<String> {
    require_question(question)?;
    Ok(ask(chat, templates, TemplateId::Expand, question)?.unwrap_or_default())
}

/// Run the enabled stages; the two calls run concurrently.
pub fn augment(
    question: &str,
    chat: &dyn ChatProvider,
    templates: &TemplateSet,
    toggles: AugmentToggles,
) -> Result<AugmentedQuery> {
    require_question(question)?;
    let mut q = AugmentedQuery::passthrough(question);
    let (r, e) = rayon::join(
        || toggles.rewrite.then(|| rewrite(question, chat, templates)).transpose(),
        || toggles.expand.then(|| expand(question, chat, templates)).transpose(),
    );
    if let Some((text, fell_back)) = r? {
        q.rewritten = text;
        q.rewrite_ran = true;
        if fell_back {
            log::warn!("empty rewrite completion, using the original question");
            q.warnings.push("rewrite: empty completion, fell back to original".into());
        }
    }
    let mut parts = vec![q.rewritten.clone()];
    if let Some(text) = e? {
        q.expand_ran = true;
        if text.is_empty() {
            log::warn!("empty expansion completion, excluded from retrieval text");
            q.warnings.push("expand: empty completion, excluded".into());
        } else {
            parts.push(text.clone());
        }
        q.expanded = text;
    }
    q.concatenated = parts.join(SEPARATOR);
    Ok(q)
}
