//! The five instruction templates, shipped as versioned text resources with
//! `{slot}` markers.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateId {
    Rewrite,
    Expand,
    Relevance,
    Usefulness,
    Reader,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::Rewrite,
        TemplateId::Expand,
        TemplateId::Relevance,
        TemplateId::Usefulness,
        TemplateId::Reader,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Rewrite => "rewrite",
            TemplateId::Expand => "expand",
            TemplateId::Relevance => "relevance",
            TemplateId::Usefulness => "usefulness",
            TemplateId::Reader => "reader",
        }
    }

    /// The shipped resource text.
    pub fn builtin_text(self) -> &'static str {
        match self {
            TemplateId::Rewrite => include_str!("../resources/templates/v1/rewrite.txt"),
            TemplateId::Expand => include_str!("../resources/templates/v1/expand.txt"),
            TemplateId::Relevance => include_str!("../resources/templates/v1/relevance.txt"),
            TemplateId::Usefulness => include_str!("../resources/templates/v1/usefulness.txt"),
            TemplateId::Reader => include_str!("../resources/templates/v1/reader.txt"),
        }
    }

    fn slots(self) -> &'static [&'static str] {
        match self {
            TemplateId::Rewrite | TemplateId::Expand => &["question"],
            TemplateId::Relevance | TemplateId::Usefulness => &["passage", "question"],
            TemplateId::Reader => &["knowledge", "question"],
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown template id {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    id: TemplateId,
    source: String,
    pieces: Vec<Piece>,
}

impl Template {
    pub fn builtin(id: TemplateId) -> Self {
        Self::parse(id, id.builtin_text()).expect("shipped template is well formed")
    }

    /// Parse template text; the slot set must match the template kind.
    pub fn parse(id: TemplateId, source: &str) -> Result<Self> {
        let mut pieces = Vec::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            let Some(close) = rest[open..].find('}') else {
                break;
            };
            let name = &rest[open + 1..open + close];
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                push_literal(&mut pieces, &rest[..open + 1]);
                rest = &rest[open + 1..];
                continue;
            }
            push_literal(&mut pieces, &rest[..open]);
            pieces.push(Piece::Slot(name.to_string()));
            rest = &rest[open + close + 1..];
        }
        push_literal(&mut pieces, rest);

        let mut found: Vec<&str> = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.as_str()),
                _ => None,
            })
            .collect();
        found.sort_unstable();
        let mut expected = id.slots().to_vec();
        expected.sort_unstable();
        if found != expected {
            return Err(Error::Contract(format!(
                "template {id} must have slots {expected:?}, found {found:?}"
            )));
        }
        Ok(Self {
            id,
            source: source.to_string(),
            pieces,
        })
    }

    pub fn id(&self) -> TemplateId {
        self.id
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Substitute every slot in one pass; slot values are never rescanned
    /// for markers.
    pub fn fill(&self, values: &[(&str, &str)]) -> Result<String> {
        let mut out = String::with_capacity(self.source.len() + 256);
        for piece in &self.pieces {
            match piece {
                Piece::Literal(l) => out.push_str(l),
                Piece::Slot(name) => {
                    let value = values
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| {
                            Error::Contract(format!("template {} slot {name} unfilled", self.id))
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    /// Recover slot values from a filled prompt. Returns `None` if the
    /// literal text differs from the template anywhere.
    pub fn unfill(&self, filled: &str) -> Option<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut rest = filled;
        let mut pending: Option<&str> = None;
        let last = self.pieces.len() - 1;
        for (i, piece) in self.pieces.iter().enumerate() {
            match piece {
                Piece::Slot(name) => pending = Some(name),
                Piece::Literal(l) => match pending.take() {
                    None => rest = rest.strip_prefix(l.as_str())?,
                    Some(slot) if i == last => {
                        let value = rest.strip_suffix(l.as_str())?;
                        out.push((slot.to_string(), value.to_string()));
                        rest = "";
                    }
                    Some(slot) => {
                        let at = rest.find(l.as_str())?;
                        out.push((slot.to_string(), rest[..at].to_string()));
                        rest = &rest[at + l.len()..];
                    }
                },
            }
        }
        match pending {
            Some(slot) => out.push((slot.to_string(), rest.to_string())),
            None if !rest.is_empty() => return None,
            None => {}
        }
        Some(out)
    }
}

fn push_literal(pieces: &mut Vec<Piece>, text: &str) {
    if text.is_empty() {
        return;
    }
    if let Some(Piece::Literal(prev)) = pieces.last_mut() {
        prev.push_str(text);
    } else {
        pieces.push(Piece::Literal(text.to_string()));
    }
}

/// The full template set in use; defaults to the shipped resources, with
/// optional per-template overrides loaded from a directory.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    rewrite: Template,
    expand: Template,
    relevance: Template,
    usefulness: Template,
    reader: Template,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            rewrite: Template::builtin(TemplateId::Rewrite),
            expand: Template::builtin(TemplateId::Expand),
            relevance: Template::builtin(TemplateId::Relevance),
            usefulness: Template::builtin(TemplateId::Usefulness),
            reader: Template::builtin(TemplateId::Reader),
        }
    }
}

impl TemplateSet {
    /// Files named `<template_id>.txt` in `dir` replace the shipped ones.
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut set = Self::default();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                *set.get_mut(id) = Template::parse(id, &text)?;
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: TemplateId) -> &Template {
        match id {
            TemplateId::Rewrite => &self.rewrite,
            TemplateId::Expand => &self.expand,
            TemplateId::Relevance => &self.relevance,
            TemplateId::Usefulness => &self.usefulness,
            TemplateId::Reader => &self.reader,
        }
    }

    fn get_mut(&mut self, id: TemplateId) -> &mut Template {
        match id {
            TemplateId::Rewrite => &mut self.rewrite,
            TemplateId::Expand => &mut self.expand,
            TemplateId::Relevance => &mut self.relevance,
            TemplateId::Usefulness => &mut self.usefulness,
            TemplateId::Reader => &mut self.reader,
        }
    }
}
