//! Fixtures, brute-force oracles and scripted mocks shared by the
//! integration tests. Oracles deliberately avoid the crate's own scoring
//! code: they recompute everything from chunk text.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use ragmed::corpus::{ingest, ChunkStore, Document, IngestOptions};
use ragmed::providers::{
    ChatProvider, ChatRequest, MockChat, MockScorer, MockSparse, Providers, DEFAULT_VOCAB_SIZE,
};
use ragmed::reader::{DatasetTag, McQuestion};
use ragmed::retrieval::{HybridIndex, IndexKinds, ScoredPassage, Stage};
use ragmed::templates::{TemplateId, TemplateSet};

pub const SEED: u64 = 7;
pub const BM25_K1: f64 = 0.9;
pub const BM25_B: f64 = 0.4;
pub const LABELS: [&str; 4] = ["A", "B", "C", "D"];
const OPTION_TEXT: [&str; 4] = ["first choice", "second choice", "third choice", "fourth choice"];

/// Corpus vocabulary. None of these words occur in question stems or
/// option texts of the planted fixture.
pub const VOCAB: [&str; 48] = [
    "renal", "cardiac", "embolus", "biopsy", "lumen", "plaque", "crystal", "aorta", "artery",
    "vein", "kidney", "urine", "creatinine", "platelet", "neutrophil", "eosinophil", "lymphocyte",
    "fever", "malaise", "ischemia", "necrosis", "granuloma", "vasculitis", "statin", "insulin",
    "diabetes", "angina", "stent", "catheter", "livedo", "toe", "gangrene", "protein", "hematuria",
    "pancreas", "stroke", "dementia", "infarct", "tissue", "cleft", "needle", "vessel", "organ",
    "lesion", "syndrome", "therapy", "marrow", "serum",
];

pub fn rng(label: &str, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(seed.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn squash(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Words skewed toward the front of the vocabulary so term frequencies and
/// document frequencies vary.
pub fn vocab_word(rng: &mut ChaCha8Rng) -> &'static str {
    let x: f64 = rng.gen();
    VOCAB[((x * x) * VOCAB.len() as f64) as usize]
}

pub fn random_sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    let words: Vec<&str> = (0..n).map(|_| vocab_word(rng)).collect();
    format!("{}.", capitalize(&words.join(" ")))
}

pub fn store_from(docs: Vec<Document>) -> Arc<ChunkStore> {
    Arc::new(ingest(docs, &IngestOptions::default()).expect("ingest").0)
}

pub fn doc(doc_id: impl Into<String>, body: impl Into<String>) -> Document {
    Document {
        doc_id: doc_id.into(),
        title: String::new(),
        body: body.into(),
        language_tag: Default::default(),
    }
}

/// One to two hundred sentence chunks over [`VOCAB`]; duplicates and ties
/// are common by design.
pub fn random_store(rng: &mut ChaCha8Rng) -> Arc<ChunkStore> {
    let target = rng.gen_range(1..=200usize);
    let mut docs = Vec::new();
    let mut made = 0;
    while made < target {
        let n = rng.gen_range(1..=6usize).min(target - made);
        let body = (0..n)
            .map(|_| random_sentence(rng, 1, 24))
            .collect::<Vec<_>>()
            .join(" ");
        docs.push(doc(format!("doc{:03}", docs.len()), body));
        made += n;
    }
    let store = store_from(docs);
    assert_eq!(store.len(), target, "one chunk per generated sentence");
    store
}

pub fn random_query(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=6usize);
    let mut words: Vec<String> = (0..n).map(|_| vocab_word(rng).to_string()).collect();
    if rng.gen_bool(0.3) {
        words.push("unseenterm".into());
    }
    if rng.gen_bool(0.3) {
        words[0] = words[0].to_uppercase();
    }
    words.join(" ")
}

// ---------------------------------------------------------------------------
// Brute-force oracles

/// Lowercased ASCII alphanumeric runs.
pub fn oracle_terms(text: &str) -> Vec<String> {
    assert!(text.is_ascii(), "oracle tokenizer handles ASCII only");
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Descending score, ties by ascending chunk id, first `depth`.
pub fn ranked(store: &ChunkStore, scores: Vec<(usize, f64)>, depth: usize) -> Vec<(String, f64)> {
    let mut v: Vec<(String, f64)> = scores
        .into_iter()
        .map(|(pos, s)| (store.chunks()[pos].chunk_id.clone(), s))
        .collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(depth);
    v
}

pub fn oracle_bm25(store: &ChunkStore, query: &str, k1: f64, b: f64, depth: usize) -> Vec<(String, f64)> {
    let docs: Vec<Vec<String>> = store.chunks().iter().map(|c| oracle_terms(&c.text)).collect();
    if docs.is_empty() {
        return Vec::new();
    }
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let mut q = oracle_terms(query);
    q.sort();
    q.dedup();
    let mut scores = Vec::new();
    for (pos, d) in docs.iter().enumerate() {
        let mut s = 0.0;
        let mut hit = false;
        for t in &q {
            let tf = d.iter().filter(|w| *w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg));
            hit = true;
        }
        if hit {
            scores.push((pos, s));
        }
    }
    ranked(store, scores, depth)
}

pub fn oracle_term_id(term: &str, vocab: u32, seed: u64) -> u32 {
    let mut h = Sha256::new();
    h.update(b"sparse");
    h.update(seed.to_le_bytes());
    h.update(term.as_bytes());
    let d = h.finalize();
    u32::from_le_bytes([d[0], d[1], d[2], d[3]]) % vocab
}

/// `1 + ln(1 + tf)` per hashed term; a collision keeps the larger weight.
pub fn oracle_sparse_weights(text: &str, vocab: u32, seed: u64) -> BTreeMap<u32, f32> {
    let mut tf: HashMap<String, u32> = HashMap::new();
    for t in oracle_terms(text) {
        *tf.entry(t).or_default() += 1;
    }
    let mut out: BTreeMap<u32, f32> = BTreeMap::new();
    for (t, n) in tf {
        let w = (1.0 + (1.0 + f64::from(n)).ln()) as f32;
        let e = out.entry(oracle_term_id(&t, vocab, seed)).or_insert(w);
        if w > *e {
            *e = w;
        }
    }
    out
}

pub fn oracle_sparse(store: &ChunkStore, query: &str, vocab: u32, seed: u64, depth: usize) -> Vec<(String, f64)> {
    let docs: Vec<BTreeMap<u32, f32>> = store
        .chunks()
        .iter()
        .map(|c| oracle_sparse_weights(&c.text, vocab, seed))
        .collect();
    let max = docs.iter().flat_map(|d| d.values().copied()).fold(0.0f32, f32::max);
    let q = oracle_sparse_weights(query, vocab, seed);
    let mut scores = Vec::new();
    for (pos, d) in docs.iter().enumerate() {
        let mut s = 0.0;
        let mut hit = false;
        for (id, qw) in &q {
            if let Some(dw) = d.get(id) {
                let level = (f64::from(*dw) / f64::from(max) * 255.0).round().clamp(1.0, 255.0);
                s += f64::from(*qw) * (level * f64::from(max) / 255.0);
                hit = true;
            }
        }
        if hit {
            scores.push((pos, s));
        }
    }
    ranked(store, scores, depth)
}

/// Uniform entries in [-1, 1) from ChaCha8 keyed on the text, L2
/// normalized.
pub fn oracle_dense_vector(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut h = Sha256::new();
    h.update(b"dense");
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let raw: Vec<f64> = (0..dim)
        .map(|_| f64::from(rng.next_u32() >> 8) / 16_777_216.0 * 2.0 - 1.0)
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter().map(|v| (v / norm) as f32).collect()
}

pub fn oracle_dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

pub fn oracle_dense(store: &ChunkStore, query: &str, dim: usize, seed: u64, depth: usize) -> Vec<(String, f64)> {
    let q = oracle_dense_vector(query, dim, seed);
    let scores = store
        .chunks()
        .iter()
        .enumerate()
        .map(|(pos, c)| (pos, oracle_dot(&q, &oracle_dense_vector(&c.text, dim, seed))))
        .collect();
    ranked(store, scores, depth)
}

pub fn id_scores(hits: &[ScoredPassage]) -> Vec<(String, f64)> {
    hits.iter().map(|p| (p.chunk_id.clone(), p.score)).collect()
}

/// Exact id order and scores within `tol`; returns a description of the
/// first disagreement.
pub fn compare_rankings(got: &[(String, f64)], want: &[(String, f64)], tol: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("{} hits, oracle has {}", got.len(), want.len()));
    }
    for (rank, (g, w)) in got.iter().zip(want).enumerate() {
        if g.0 != w.0 {
            return Err(format!("rank {rank}: {} ({}) vs oracle {} ({})", g.0, g.1, w.0, w.1));
        }
        if (g.1 - w.1).abs() > tol {
            return Err(format!("rank {rank}: {} score {} vs oracle {}", g.0, g.1, w.1));
        }
    }
    Ok(())
}

pub fn passage(id: &str, score: f64, stage: Stage) -> ScoredPassage {
    ScoredPassage {
        chunk_id: id.to_string(),
        text: format!("text of {id}."),
        score,
        stage,
    }
}

// ---------------------------------------------------------------------------
// Prompt slots

pub fn slot(request: &ChatRequest, name: &str) -> Option<String> {
    TemplateSet::default()
        .get(request.template_id)
        .unfill(&request.filled_prompt)?
        .into_iter()
        .find(|(k, _)| k == name)
        .map(|(_, v)| v)
}

/// Shipped template text read from disk, independent of the crate's
/// embedded copy.
pub fn template_resource(id: TemplateId) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("resources/templates/v1")
        .join(format!("{}.txt", id.as_str()));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Chat provider that records every request before delegating.
pub struct Recording<P> {
    pub inner: P,
    pub seen: Mutex<Vec<ChatRequest>>,
}

impl<P> Recording<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl<P: ChatProvider> ChatProvider for Recording<P> {
    fn chat(&self, request: &ChatRequest) -> ragmed::Result<String> {
        self.seen.lock().unwrap().push(request.clone());
        self.inner.chat(request)
    }
}

// ---------------------------------------------------------------------------
// Planted-evidence fixture: one evidence chunk per question among fillers.

pub struct Planted {
    pub store: Arc<ChunkStore>,
    pub questions: Vec<McQuestion>,
    /// Evidence chunk id per question, same order as `questions`.
    pub evidence: Vec<String>,
}

pub fn planted_key(i: usize) -> String {
    format!("zq{i:03}")
}

pub fn planted_sentence(i: usize, gold: &str) -> String {
    format!("The correct option for case {} is {gold}.", planted_key(i))
}

pub fn options() -> BTreeMap<String, String> {
    LABELS
        .iter()
        .zip(OPTION_TEXT)
        .map(|(l, t)| (l.to_string(), t.to_string()))
        .collect()
}

/// Fifty four-sentence documents: three fillers and one planted sentence
/// each, two hundred chunks in all.
pub fn planted_fixture(seed: u64) -> Planted {
    let mut r = rng("planted", seed);
    let mut docs = Vec::new();
    let mut questions = Vec::new();
    let mut evidence = Vec::new();
    for i in 0..50 {
        let gold = LABELS[r.gen_range(0..4)];
        let at = i % 4;
        let sentences: Vec<String> = (0..4)
            .map(|s| {
                if s == at {
                    planted_sentence(i, gold)
                } else {
                    random_sentence(&mut r, 8, 20)
                }
            })
            .collect();
        let doc_id = format!("case{i:03}");
        evidence.push(ragmed::corpus::chunk_id(&doc_id, at));
        docs.push(doc(doc_id, sentences.join(" ")));
        questions.push(McQuestion {
            question_id: format!("q{i:03}"),
            stem: format!("Which option is correct for case {}?", planted_key(i)),
            options: options(),
            gold: gold.to_string(),
            dataset_tag: DatasetTag::Usmle,
        });
    }
    let store = store_from(docs);
    assert_eq!(store.len(), 200);
    for id in &evidence {
        assert!(store.by_id(id).unwrap().text.contains("correct option"));
    }
    Planted {
        store,
        questions,
        evidence,
    }
}

static KEY: std::sync::LazyLock<Regex> = std::sync::LazyLock::new(|| Regex::new(r"zq\d{3}").unwrap());
static EVIDENCE: std::sync::LazyLock<Regex> =
    std::sync::LazyLock::new(|| Regex::new(r"correct option for case (zq\d{3}) is ([A-D])\.").unwrap());

fn question_key(r: &ChatRequest) -> Option<String> {
    slot(r, "question").and_then(|q| KEY.find(&q).map(|m| m.as_str().to_string()))
}

fn evidence_label(r: &ChatRequest) -> Option<String> {
    let key = question_key(r)?;
    let knowledge = slot(r, "knowledge")?;
    EVIDENCE
        .captures_iter(&knowledge)
        .find(|c| c[1] == key)
        .map(|c| c[2].to_string())
}

fn planted_chat(reader: impl Fn(Option<String>) -> String + Send + Sync + 'static) -> MockChat {
    MockChat::new()
        .echo(TemplateId::Rewrite)
        .echo(TemplateId::Expand)
        .rule(|r| {
            (r.template_id == TemplateId::Relevance).then(|| {
                let yes = question_key(r)
                    .zip(slot(r, "passage"))
                    .is_some_and(|(k, p)| p.contains(&k));
                if yes { "Yes" } else { "No" }.to_string()
            })
        })
        .rule(|r| {
            (r.template_id == TemplateId::Usefulness).then(|| {
                let yes = question_key(r)
                    .zip(slot(r, "passage"))
                    .is_some_and(|(k, p)| p.contains(&k) && p.contains("correct option"));
                if yes { "Yes" } else { "No" }.to_string()
            })
        })
        .rule(move |r| (r.template_id == TemplateId::Reader).then(|| reader(evidence_label(r))))
}

/// Judges relevance and usefulness by the question's key and answers with
/// the label stated in the evidence.
pub fn oracle_chat() -> MockChat {
    planted_chat(|label| match label {
        Some(l) => format!("The evidence states the correct option directly.\nThe answer is {l}."),
        None => "I cannot determine the answer.".into(),
    })
}

/// Same judgments, but the reader always contradicts the evidence.
pub fn adversarial_chat() -> MockChat {
    planted_chat(|label| match label {
        Some(l) => {
            let i = LABELS.iter().position(|x| *x == l).unwrap();
            format!("The answer is {}.", LABELS[(i + 1) % 4])
        }
        None => "I cannot determine the answer.".into(),
    })
}

/// Mock providers with a term-overlap cross-encoder so reranking rewards
/// the evidence chunk.
pub fn planted_providers(seed: u64, chat: impl ChatProvider + 'static) -> Providers {
    Providers::mock_with_chat(seed, chat).with_scorer(MockScorer::lexical(MockSparse::new(DEFAULT_VOCAB_SIZE, seed)))
}

pub fn planted_index(store: &Arc<ChunkStore>, seed: u64) -> Arc<HybridIndex> {
    Arc::new(HybridIndex::build(store.clone(), &Providers::mock(seed), IndexKinds::Both).expect("index"))
}

/// The same oracle judgments as line-delimited mock script rules, for the
/// CLI.
pub fn planted_script(p: &Planted) -> String {
    let mut lines = vec![
        serde_json::json!({"template": "rewrite", "echo": true}),
        serde_json::json!({"template": "expand", "echo": true}),
    ];
    for (i, q) in p.questions.iter().enumerate() {
        let key = planted_key(i);
        lines.push(serde_json::json!({
            "template": "relevance",
            "contains": format!("case {key} is {}.\nx: Which option is correct for case {key}?", q.gold),
            "completion": "Yes",
        }));
    }
    lines.push(serde_json::json!({"template": "relevance", "completion": "No"}));
    lines.push(serde_json::json!({"template": "usefulness", "contains": "correct option for case", "completion": "Yes"}));
    lines.push(serde_json::json!({"template": "usefulness", "completion": "No"}));
    for (i, q) in p.questions.iter().enumerate() {
        lines.push(serde_json::json!({
            "template": "reader",
            "contains": planted_sentence(i, &q.gold),
            "completion": format!("The answer is {}.", q.gold),
        }));
    }
    lines.iter().map(|l| format!("{l}\n")).collect()
}

pub struct Workspace {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub closed_book_config: PathBuf,
    pub dataset: PathBuf,
}

/// Store, index, dataset, mock script and two configs (full pipeline and
/// closed book) on disk under `dir`.
pub fn planted_workspace(p: &Planted, dir: &Path, seed: u64) -> Workspace {
    p.store.save(&dir.join("store")).unwrap();
    planted_index(&p.store, seed).save(&dir.join("index")).unwrap();
    let dataset = dir.join("dataset.jsonl");
    let lines: String = p
        .questions
        .iter()
        .map(|q| format!("{}\n", serde_json::to_string(q).unwrap()))
        .collect();
    std::fs::write(&dataset, lines).unwrap();
    std::fs::write(dir.join("script.jsonl"), planted_script(p)).unwrap();
    let base = format!(
        "version = 1\nseed = {seed}\nconcurrency = 4\n\n[paths]\nstore = \"store\"\nindex = \"index\"\n\n\
         [providers]\nkind = \"mock\"\nmock_script = \"script.jsonl\"\nmock_scorer = \"lexical\"\n"
    );
    let config = dir.join("pipeline.toml");
    std::fs::write(&config, &base).unwrap();
    let closed_book_config = dir.join("closed_book.toml");
    std::fs::write(
        &closed_book_config,
        format!(
            "{base}\n[stages]\nrewrite = false\nexpand = false\nretriever = \"none\"\nrelevance = false\nusefulness = false\n"
        ),
    )
    .unwrap();
    Workspace {
        dir: dir.to_path_buf(),
        config,
        closed_book_config,
        dataset,
    }
}

/// Run the CLI in process; returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["ragmed"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = ragmed::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

// ---------------------------------------------------------------------------
// Weak-supervision fixture: a marker word makes the scripted reader right.

pub struct Mining {
    pub store: Arc<ChunkStore>,
    pub questions: Vec<McQuestion>,
    pub markers: Vec<String>,
}

pub fn mining_key(i: usize) -> String {
    format!("kq{i:03}")
}

pub fn mining_marker(i: usize) -> String {
    format!("mk{i:03}")
}

/// Twenty questions, each with twelve topical chunks (some carrying the
/// question's marker), one off-topic chunk carrying the marker that BM25
/// cannot recall, and two hundred shared fillers.
pub fn mining_fixture(seed: u64) -> Mining {
    let mut r = rng("mining", seed);
    let mut docs = Vec::new();
    let mut questions = Vec::new();
    let mut markers = Vec::new();
    for i in 0..20 {
        let key = mining_key(i);
        let marker = mining_marker(i);
        let topical: Vec<String> = (0..12)
            .map(|_| {
                let mut s = random_sentence(&mut r, 6, 14);
                s.pop();
                if i != 19 && r.gen_bool(0.35) {
                    format!("{s} {key} {marker}.")
                } else {
                    format!("{s} {key}.")
                }
            })
            .collect();
        docs.push(doc(format!("topic{i:03}"), topical.join(" ")));
        docs.push(doc(format!("stray{i:03}"), format!("Unrelated {marker} annotation.")));
        let words: Vec<&str> = (0..3).map(|_| vocab_word(&mut r)).collect();
        questions.push(McQuestion {
            question_id: format!("m{i:03}"),
            stem: format!("Regarding {key} with {}, what is expected?", words.join(" ")),
            options: options(),
            gold: LABELS[r.gen_range(0..4)].to_string(),
            dataset_tag: DatasetTag::Medmcqa,
        });
        markers.push(marker);
    }
    for f in 0..40 {
        let body = (0..5).map(|_| random_sentence(&mut r, 4, 16)).collect::<Vec<_>>().join(" ");
        docs.push(doc(format!("filler{f:03}"), body));
    }
    Mining {
        store: store_from(docs),
        questions,
        markers,
    }
}

/// Answers gold iff the knowledge carries the question's marker, and a
/// wrong label otherwise.
pub fn marker_reader(m: &Mining) -> MockChat {
    let by_key: HashMap<String, (String, String)> = m
        .questions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let wrong = LABELS.iter().find(|l| **l != q.gold).unwrap().to_string();
            (mining_key(i), (q.gold.clone(), wrong))
        })
        .collect();
    let key_re = Regex::new(r"kq\d{3}").unwrap();
    MockChat::new().rule(move |r| {
        if r.template_id != TemplateId::Reader {
            return None;
        }
        let question = slot(r, "question")?;
        let knowledge = slot(r, "knowledge")?;
        let key = key_re.find(&question)?.as_str().to_string();
        let (gold, wrong) = by_key.get(&key)?;
        let marker = key.replacen("kq", "mk", 1);
        let label = if knowledge.split(|c: char| !c.is_alphanumeric()).any(|w| w == marker) {
            gold
        } else {
            wrong
        };
        Some(format!("The answer is {label}."))
    })
}

pub fn has_word(text: &str, word: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric()).any(|w| w == word)
}

// ---------------------------------------------------------------------------
// Worked example with hand-annotated relevance and usefulness judgments.

#[derive(Debug, Deserialize)]
pub struct CasePassage {
    pub chunk_id: String,
    pub text: String,
    pub relevant: bool,
}

#[derive(Debug, Deserialize)]
pub struct CaseSegment {
    pub text: String,
    pub useful: bool,
}

#[derive(Debug, Deserialize)]
pub struct CaseStudy {
    pub question: McQuestion,
    pub rewritten: String,
    pub expanded: String,
    pub passages: Vec<CasePassage>,
    pub segments: Vec<CaseSegment>,
    pub refined_knowledge: String,
}

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn case_study() -> CaseStudy {
    serde_json::from_str(&std::fs::read_to_string(fixture_path("case_study.json")).unwrap()).unwrap()
}

impl CaseStudy {
    pub fn scored_passages(&self) -> Vec<ScoredPassage> {
        self.passages
            .iter()
            .enumerate()
            .map(|(i, p)| ScoredPassage {
                chunk_id: p.chunk_id.clone(),
                text: p.text.clone(),
                score: 1.0 - i as f64 * 0.01,
                stage: Stage::Reranked,
            })
            .collect()
    }

    /// The annotated segment (by index) whose text contains `segment`,
    /// whitespace-insensitively.
    pub fn owning_segment(&self, segment: &str) -> Option<usize> {
        let s = squash(segment);
        self.segments.iter().position(|a| squash(&a.text).contains(&s))
    }

    /// The annotations as scripted judgments: relevance by passage, and a
    /// segment is useful iff it lies inside a useful annotated segment.
    pub fn judgments(&self) -> MockChat {
        let relevant: HashSet<String> = self
            .passages
            .iter()
            .filter(|p| p.relevant)
            .map(|p| squash(&p.text))
            .collect();
        let useful: Vec<String> = self
            .segments
            .iter()
            .filter(|s| s.useful)
            .map(|s| squash(&s.text))
            .collect();
        let (rewritten, expanded) = (self.rewritten.clone(), self.expanded.clone());
        MockChat::new()
            .always(TemplateId::Rewrite, rewritten)
            .always(TemplateId::Expand, expanded)
            .rule(move |r| {
                (r.template_id == TemplateId::Relevance).then(|| {
                    let p = squash(&slot(r, "passage").unwrap_or_default());
                    if relevant.contains(&p) { "Yes" } else { "No" }.to_string()
                })
            })
            .rule(move |r| {
                (r.template_id == TemplateId::Usefulness).then(|| {
                    let s = squash(&slot(r, "passage").unwrap_or_default());
                    if useful.iter().any(|u| u.contains(&s)) { "Yes" } else { "No" }.to_string()
                })
            })
            .always(TemplateId::Reader, "Cholesterol crystals explain every finding.\nAnswer: B")
    }
}

pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
