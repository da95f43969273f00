//! Sentence segmentation, word counting and tokenization shared by the
//! corpus and the refiner.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum LanguageTag {
    #[default]
    #[serde(rename = "latin-script")]
    LatinScript,
    #[serde(rename = "cjk")]
    Cjk,
}

impl LanguageTag {
    /// CJK when more than half of the non-whitespace characters are CJK.
    pub fn detect(text: &str) -> Self {
        let (mut cjk, mut total) = (0usize, 0usize);
        for c in text.chars().filter(|c| !c.is_whitespace()) {
            total += 1;
            if is_cjk(c) {
                cjk += 1;
            }
        }
        if cjk * 2 > total {
            LanguageTag::Cjk
        } else {
            LanguageTag::LatinScript
        }
    }
}

/// Abbreviations that end in a period but do not end a sentence.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "dr.", "mr.", "mrs.", "ms.", "prof.", "vs.", "cf.", "al.", "fig.", "figs.",
    "no.", "approx.", "st.", "jr.", "sr.", "vol.", "ca.", "resp.", "min.", "max.",
];

const LATIN_TERMINATORS: &[char] = &['.', '?', '!'];
const CJK_TERMINATORS: &[char] = &['。', '！', '？', '．'];
const CLOSERS: &[char] = &[
    '"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}', '」', '』', '）', '】',
];

#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: Vec<String>,
    guard: bool,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::new(true)
    }
}

impl SentenceSplitter {
    /// `guard = false` splits on every terminator, abbreviations included.
    pub fn new(guard: bool) -> Self {
        Self {
            abbreviations: DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
            guard,
        }
    }

    pub fn strict() -> Self {
        Self::new(false)
    }

    pub fn with_abbreviations<I, S>(mut self, abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.abbreviations = abbreviations
            .into_iter()
            .map(|s| s.into().to_lowercase())
            .collect();
        self
    }

    pub fn guard_enabled(&self) -> bool {
        self.guard
    }

    /// Byte ranges of the sentences in `text`, trimmed of surrounding
    /// whitespace. Gaps between consecutive ranges are pure whitespace.
    pub fn split(&self, text: &str, lang: LanguageTag) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        let mut iter = text.char_indices().peekable();

        while let Some((pos, ch)) = iter.next() {
            if start.is_none() {
                if ch.is_whitespace() {
                    continue;
                }
                start = Some(pos);
            }
            let cjk_stop = lang == LanguageTag::Cjk && CJK_TERMINATORS.contains(&ch);
            let latin_stop = LATIN_TERMINATORS.contains(&ch);
            if !cjk_stop && !latin_stop {
                continue;
            }
            // absorb runs like "?!" or "..." and trailing closing marks
            let mut end = pos + ch.len_utf8();
            while let Some(&(p, c)) = iter.peek() {
                if LATIN_TERMINATORS.contains(&c)
                    || CJK_TERMINATORS.contains(&c)
                    || CLOSERS.contains(&c)
                {
                    end = p + c.len_utf8();
                    iter.next();
                } else {
                    break;
                }
            }
            let at_boundary = match iter.peek() {
                None => true,
                Some(&(_, next)) => cjk_stop || next.is_whitespace(),
            };
            if !at_boundary {
                continue;
            }
            let s = start.expect("sentence start set");
            if ch == '.' && self.guard && self.is_abbreviation(&text[s..end]) {
                continue;
            }
            out.push(s..end);
            start = None;
        }
        if let Some(s) = start {
            let end = s + text[s..].trim_end().len();
            if end > s {
                out.push(s..end);
            }
        }
        out
    }

    pub fn sentences<'a>(&self, text: &'a str, lang: LanguageTag) -> Vec<&'a str> {
        self.split(text, lang)
            .into_iter()
            .map(|r| &text[r])
            .collect()
    }

    fn is_abbreviation(&self, sentence_so_far: &str) -> bool {
        let last = sentence_so_far
            .rsplit(char::is_whitespace)
            .next()
            .unwrap_or("");
        let word = last
            .trim_start_matches(|c: char| !c.is_alphanumeric())
            .trim_end_matches(|c: char| CLOSERS.contains(&c))
            .to_lowercase();
        self.abbreviations.contains(&word)
    }
}

/// Words for latin script are maximal non-whitespace runs; for CJK every
/// non-whitespace character counts.
pub fn word_count(text: &str, lang: LanguageTag) -> usize {
    match lang {
        LanguageTag::LatinScript => text.split_whitespace().count(),
        LanguageTag::Cjk => text.chars().filter(|c| !c.is_whitespace()).count(),
    }
}

/// Byte ranges of the words in `text` under the same rule as [`word_count`].
pub fn word_spans(text: &str, lang: LanguageTag) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    match lang {
        LanguageTag::LatinScript => {
            let mut start = None;
            for (i, c) in text.char_indices() {
                match (c.is_whitespace(), start) {
                    (true, Some(s)) => {
                        spans.push(s..i);
                        start = None;
                    }
                    (false, None) => start = Some(i),
                    _ => {}
                }
            }
            if let Some(s) = start {
                spans.push(s..text.len());
            }
        }
        LanguageTag::Cjk => {
            for (i, c) in text.char_indices() {
                if !c.is_whitespace() {
                    spans.push(i..i + c.len_utf8());
                }
            }
        }
    }
    spans
}

/// Lowercased lexical terms used by BM25 and the mock sparse encoder.
/// Alphanumeric runs form terms, except CJK ideographs which are one
/// term each.
pub fn terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xAC00..=0xD7AF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F)
}

/// Collapse every whitespace run to a single space and trim.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Strip control characters other than newline; CR/LF become LF, tabs
/// become spaces.
pub fn clean(text: &str) -> String {
    let text = text.replace("\r\n", "\n");
    text.chars()
        .filter_map(|c| match c {
            '\n' => Some('\n'),
            '\r' | '\t' => Some(' '),
            c if c.is_control() => None,
            c => Some(c),
        })
        .collect()
}
