//! Document ingestion and the chunk store.
//!
//! Every document body is cleaned and split at sentence terminators; each
//! sentence becomes one chunk, the smallest retrieval unit. Sentences longer
//! than the hard word cap are split at word boundaries. The store keeps
//! chunks sorted by `chunk_id`, so positional order equals id order and
//! every downstream tie-break on position is a tie-break on id.
//!
//! On disk a store is a directory holding `chunks.jsonl` (one record per
//! chunk), `chunks.idx` (little-endian u64 byte offset of every record) and
//! `stats.json`.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::{self, LanguageTag, SentenceSplitter};

pub const DEFAULT_MAX_CHUNK_WORDS: usize = 512;

const RECORDS_FILE: &str = "chunks.jsonl";
const OFFSETS_FILE: &str = "chunks.idx";
const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub language_tag: LanguageTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub word_count: usize,
    #[serde(default)]
    pub language_tag: LanguageTag,
}

pub fn chunk_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#{ordinal:06}")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub paragraph_count: u64,
    pub token_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    pub chunks: usize,
    /// doc_ids of documents whose cleaned body was empty.
    pub skipped_empty: Vec<String>,
    /// (doc_id, sentence ordinal) of sentences split to respect the word cap.
    pub over_cap_splits: Vec<(String, usize)>,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub splitter: SentenceSplitter,
    pub max_chunk_words: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            splitter: SentenceSplitter::default(),
            max_chunk_words: DEFAULT_MAX_CHUNK_WORDS,
        }
    }
}

impl IngestOptions {
    pub fn strict_period_split() -> Self {
        Self {
            splitter: SentenceSplitter::strict(),
            ..Self::default()
        }
    }
}

/// Immutable, id-ordered collection of chunks.
#[derive(Debug, Clone, Default)]
pub struct ChunkStore {
    chunks: Vec<Chunk>,
    by_id: BTreeMap<String, usize>,
}

impl ChunkStore {
    /// Build from arbitrary chunks; rejects duplicate ids and empty texts.
    pub fn from_chunks(mut chunks: Vec<Chunk>) -> Result<Self> {
        chunks.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
        let mut by_id = BTreeMap::new();
        for (i, c) in chunks.iter().enumerate() {
            if c.text.trim().is_empty() {
                return Err(Error::Data(format!("chunk {} has empty text", c.chunk_id)));
            }
            if by_id.insert(c.chunk_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate chunk_id {}", c.chunk_id)));
            }
        }
        Ok(Self { chunks, by_id })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn get(&self, pos: usize) -> Option<&Chunk> {
        self.chunks.get(pos)
    }

    pub fn position(&self, chunk_id: &str) -> Option<usize> {
        self.by_id.get(chunk_id).copied()
    }

    pub fn by_id(&self, chunk_id: &str) -> Option<&Chunk> {
        self.position(chunk_id).map(|i| &self.chunks[i])
    }

    /// Chunks of one document in ordinal order.
    pub fn document_chunks(&self, doc_id: &str) -> Vec<&Chunk> {
        let mut out: Vec<&Chunk> = self.chunks.iter().filter(|c| c.doc_id == doc_id).collect();
        out.sort_by_key(|c| c.ordinal);
        out
    }

    pub fn stats(&self) -> CorpusStats {
        corpus_stats(self)
    }

    /// SHA-256 over the ordered chunk ids.
    pub fn id_digest(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.chunks {
            h.update(c.chunk_id.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Digest over ids and texts; an index built over other text is stale
    /// even when the ids agree.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.chunks {
            h.update(c.chunk_id.as_bytes());
            h.update([0]);
            h.update(c.text.as_bytes());
            h.update([0xff]);
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let records_path = dir.join(RECORDS_FILE);
        let mut records =
            BufWriter::new(File::create(&records_path).map_err(|e| Error::io(&records_path, e))?);
        let mut offsets = Vec::with_capacity(self.chunks.len() * 8);
        let mut pos = 0u64;
        for chunk in &self.chunks {
            let mut line = serde_json::to_vec(chunk)?;
            line.push(b'\n');
            offsets.extend_from_slice(&pos.to_le_bytes());
            pos += line.len() as u64;
            records
                .write_all(&line)
                .map_err(|e| Error::io(&records_path, e))?;
        }
        records.flush().map_err(|e| Error::io(&records_path, e))?;
        let idx_path = dir.join(OFFSETS_FILE);
        fs::write(&idx_path, offsets).map_err(|e| Error::io(&idx_path, e))?;
        let stats_path = dir.join(STATS_FILE);
        let stats = serde_json::to_vec_pretty(&self.stats())?;
        fs::write(&stats_path, stats).map_err(|e| Error::io(&stats_path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let records_path = dir.join(RECORDS_FILE);
        let file = File::open(&records_path).map_err(|e| Error::io(&records_path, e))?;
        let mut chunks = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&records_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: Chunk = serde_json::from_str(&line).map_err(|e| {
                Error::Data(format!("{}:{}: {e}", records_path.display(), n + 1))
            })?;
            chunks.push(chunk);
        }
        Self::from_chunks(chunks)
    }

    /// Random access to one record through the offset index.
    pub fn read_record(dir: &Path, pos: usize) -> Result<Chunk> {
        let idx_path = dir.join(OFFSETS_FILE);
        let idx = fs::read(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
        let raw = idx
            .get(pos * 8..pos * 8 + 8)
            .ok_or_else(|| Error::Data(format!("record {pos} out of range")))?;
        let offset = u64::from_le_bytes(raw.try_into().expect("8 bytes"));
        let records_path = dir.join(RECORDS_FILE);
        let mut file = File::open(&records_path).map_err(|e| Error::io(&records_path, e))?;
        file.seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&records_path, e))?;
        let mut line = String::new();
        BufReader::new(file)
            .read_line(&mut line)
            .map_err(|e| Error::io(&records_path, e))?;
        Ok(serde_json::from_str(line.trim_end())?)
    }
}

/// Split documents into chunks. Documents are processed in parallel; the
/// store is assembled by a single owner afterwards.
pub fn ingest<I>(documents: I, options: &IngestOptions) -> Result<(ChunkStore, IngestReport)>
where
    I: IntoIterator<Item = Document>,
{
    let documents: Vec<Document> = documents.into_iter().collect();
    let mut seen = HashSet::new();
    for d in &documents {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateDocId(d.doc_id.clone()));
        }
    }

    let per_doc: Vec<(Vec<Chunk>, Vec<usize>)> = documents
        .par_iter()
        .map(|d| chunk_document(d, options))
        .collect();

    let mut report = IngestReport {
        documents: documents.len(),
        ..Default::default()
    };
    let mut all = Vec::new();
    for (doc, (chunks, splits)) in documents.iter().zip(per_doc) {
        if chunks.is_empty() {
            report.skipped_empty.push(doc.doc_id.clone());
        }
        report
            .over_cap_splits
            .extend(splits.into_iter().map(|s| (doc.doc_id.clone(), s)));
        all.extend(chunks);
    }
    report.chunks = all.len();
    Ok((ChunkStore::from_chunks(all)?, report))
}

/// Chunks of one document plus the sentence ordinals that exceeded the cap.
fn chunk_document(doc: &Document, options: &IngestOptions) -> (Vec<Chunk>, Vec<usize>) {
    let body = text::clean(&doc.body);
    let lang = doc.language_tag;
    let mut chunks = Vec::new();
    let mut splits = Vec::new();
    let cap = options.max_chunk_words.max(1);

    for (s_idx, range) in options.splitter.split(&body, lang).into_iter().enumerate() {
        let sentence = &body[range];
        let words = text::word_spans(sentence, lang);
        let pieces: Vec<&str> = if words.len() <= cap {
            vec![sentence]
        } else {
            splits.push(s_idx);
            words
                .chunks(cap)
                .map(|w| &sentence[w[0].start..w[w.len() - 1].end])
                .collect()
        };
        for piece in pieces {
            let ordinal = chunks.len();
            chunks.push(Chunk {
                chunk_id: chunk_id(&doc.doc_id, ordinal),
                doc_id: doc.doc_id.clone(),
                ordinal,
                text: piece.to_string(),
                word_count: text::word_count(piece, lang),
                language_tag: lang,
            });
        }
    }
    (chunks, splits)
}

/// Paragraph (chunk) and token counts over the whole store.
pub fn corpus_stats(store: &ChunkStore) -> CorpusStats {
    store
        .chunks()
        .iter()
        .fold(CorpusStats::default(), |mut acc, c| {
            acc.paragraph_count += 1;
            acc.token_count += text::word_count(&c.text, c.language_tag) as u64;
            acc
        })
}

/// Read line-delimited document records.
pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            line: n + 1,
            field: "document".into(),
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}
