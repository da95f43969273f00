//! C ABI over the ragmed core: chunk stores, retrieval and answer parsing.
//!
//! Every fallible call returns a [`RagmedStatus`]; on failure the message is
//! available from [`ragmed_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use ragmed::config::PipelineConfig;
use ragmed::corpus::{ingest, read_documents, ChunkStore, IngestOptions};
use ragmed::providers::Providers;
use ragmed::reader::{parse_mc_answer, DatasetTag, McQuestion};
use ragmed::retrieval::{HybridIndex, RetrievalParams, RetrieverVariant};
use ragmed::Error;

/// Status codes; the nonzero values match the CLI exit codes where both
/// exist.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RagmedStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Provider = 4,
    Data = 5,
    Panic = 6,
}

pub struct RagmedStore {
    inner: Arc<ChunkStore>,
}

pub struct RagmedRetriever {
    index: Arc<HybridIndex>,
    providers: Providers,
    params: RetrievalParams,
    variant: RetrieverVariant,
}

struct Hit {
    chunk_id: CString,
    text: CString,
    score: f64,
}

pub struct RagmedResults {
    hits: Vec<Hit>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> RagmedStatus {
    match e.exit_code() {
        3 => RagmedStatus::Config,
        4 => RagmedStatus::Provider,
        _ => RagmedStatus::Data,
    }
}

struct Fail(RagmedStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Run `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RagmedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RagmedStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            RagmedStatus::Panic
        }
    }
}

/// # Safety
/// `p` is NULL or a NUL-terminated string valid for the call.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(RagmedStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RagmedStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

fn null_out(name: &str) -> Fail {
    Fail(RagmedStatus::NullArgument, format!("{name} is NULL"))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ragmed_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn ragmed_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Segment a JSON-lines document file into a chunk store directory.
///
/// # Safety
/// `input` and `out_dir` are NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ragmed_ingest(input: *const c_char, out_dir: *const c_char, strict_period_split: bool) -> RagmedStatus {
    guard(|| {
        let input = PathBuf::from(str_arg(input, "input")?);
        let out_dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let opts = if strict_period_split {
            IngestOptions::strict_period_split()
        } else {
            IngestOptions::default()
        };
        let (store, _) = ingest(read_documents(&input)?, &opts)?;
        store.save(&out_dir)?;
        Ok(())
    })
}

/// Open a chunk store directory.
///
/// # Safety
/// `dir` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ragmed_store_open(dir: *const c_char, out: *mut *mut RagmedStore) -> RagmedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let store = ChunkStore::load(&dir)?;
        *out = Box::into_raw(Box::new(RagmedStore { inner: Arc::new(store) }));
        Ok(())
    })
}

/// Number of chunks; 0 for NULL.
///
/// # Safety
/// `store` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ragmed_store_len(store: *const RagmedStore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.len())
}

/// # Safety
/// `store` is NULL or a handle from [`ragmed_store_open`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ragmed_store_free(store: *mut RagmedStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Open a retriever from a pipeline configuration file; `paths.store` and
/// `paths.index` must be set. The configured retriever variant is used, or
/// the hybrid one when the file disables retrieval.
///
/// # Safety
/// `config_path` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ragmed_retriever_open(config_path: *const c_char, out: *mut *mut RagmedRetriever) -> RagmedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        let cfg = PipelineConfig::load(&PathBuf::from(str_arg(config_path, "config_path")?))?;
        cfg.validate(ragmed::config::Needs { store: true, index: true })?;
        let r = RagmedRetriever {
            index: cfg.load_index()?,
            providers: cfg.providers()?,
            params: cfg.retrieval,
            variant: cfg.stages.retriever.unwrap_or(RetrieverVariant::Hybrid),
        };
        *out = Box::into_raw(Box::new(r));
        Ok(())
    })
}

/// Open a retriever over a store and index with seeded mock encoders.
///
/// # Safety
/// `store` is a live handle; `index_dir` is a NUL-terminated string; `out`
/// is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ragmed_retriever_open_mock(
    store: *const RagmedStore,
    index_dir: *const c_char,
    seed: u64,
    out: *mut *mut RagmedRetriever,
) -> RagmedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        let store = store.as_ref().ok_or_else(|| null_out("store"))?;
        let dir = PathBuf::from(str_arg(index_dir, "index_dir")?);
        let index = HybridIndex::load(&dir, store.inner.clone())?;
        let r = RagmedRetriever {
            index: Arc::new(index),
            providers: Providers::mock(seed),
            params: RetrievalParams::default(),
            variant: RetrieverVariant::Hybrid,
        };
        *out = Box::into_raw(Box::new(r));
        Ok(())
    })
}

/// # Safety
/// `retriever` is NULL or a handle from a `ragmed_retriever_open*` call.
#[no_mangle]
pub unsafe extern "C" fn ragmed_retriever_free(retriever: *mut RagmedRetriever) {
    if !retriever.is_null() {
        drop(Box::from_raw(retriever));
    }
}

/// Retrieve the top `k` passages. `variant` is NULL for the retriever's
/// default or one of "bm25", "sparse", "dense", "sparse+dense",
/// "sparse+rerank", "dense+rerank", "hybrid".
///
/// # Safety
/// `retriever` is a live handle; `query` (and `variant` unless NULL) are
/// NUL-terminated strings; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ragmed_search(
    retriever: *const RagmedRetriever,
    query: *const c_char,
    variant: *const c_char,
    k: usize,
    out: *mut *mut RagmedResults,
) -> RagmedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        let r = retriever.as_ref().ok_or_else(|| null_out("retriever"))?;
        let query = str_arg(query, "query")?;
        let variant = if variant.is_null() {
            r.variant
        } else {
            str_arg(variant, "variant")?
                .parse()
                .map_err(|e: Error| Fail(RagmedStatus::InvalidArgument, e.to_string()))?
        };
        if k == 0 {
            return Err(Fail(RagmedStatus::InvalidArgument, "k must be >= 1".into()));
        }
        let mut params = r.params;
        params.final_depth = k;
        params.sparse_depth = params.sparse_depth.max(k);
        params.dense_depth = params.dense_depth.max(k);
        let (passages, _) = r.index.retrieve(&r.providers, query, &params, variant)?;
        let hits = passages
            .into_iter()
            .map(|p| Hit {
                chunk_id: CString::new(p.chunk_id).unwrap_or_default(),
                text: CString::new(p.text).unwrap_or_default(),
                score: p.score,
            })
            .collect();
        *out = Box::into_raw(Box::new(RagmedResults { hits }));
        Ok(())
    })
}

/// # Safety
/// `results` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ragmed_results_len(results: *const RagmedResults) -> usize {
    results.as_ref().map_or(0, |r| r.hits.len())
}

/// Chunk id of hit `i`, or NULL when out of range. Owned by `results`.
///
/// # Safety
/// `results` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ragmed_results_chunk_id(results: *const RagmedResults, i: usize) -> *const c_char {
    results
        .as_ref()
        .and_then(|r| r.hits.get(i))
        .map_or(ptr::null(), |h| h.chunk_id.as_ptr())
}

/// Text of hit `i`, or NULL when out of range. Owned by `results`.
///
/// # Safety
/// `results` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ragmed_results_text(results: *const RagmedResults, i: usize) -> *const c_char {
    results
        .as_ref()
        .and_then(|r| r.hits.get(i))
        .map_or(ptr::null(), |h| h.text.as_ptr())
}

/// Score of hit `i`, or NaN when out of range.
///
/// # Safety
/// `results` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ragmed_results_score(results: *const RagmedResults, i: usize) -> f64 {
    results
        .as_ref()
        .and_then(|r| r.hits.get(i))
        .map_or(f64::NAN, |h| h.score)
}

/// # Safety
/// `results` is NULL or a handle from [`ragmed_search`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ragmed_results_free(results: *mut RagmedResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

/// Parse a reader completion against the options, given as a JSON object
/// of label to text. Writes the label and a NUL into `label_out`, which
/// must hold 2 bytes. An empty string means no answer could be parsed.
///
/// # Safety
/// `completion` and `options_json` are NUL-terminated strings; `label_out`
/// points to at least 2 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ragmed_parse_answer(
    completion: *const c_char,
    options_json: *const c_char,
    label_out: *mut c_char,
) -> RagmedStatus {
    guard(|| {
        if label_out.is_null() {
            return Err(null_out("label_out"));
        }
        let completion = str_arg(completion, "completion")?;
        let options: BTreeMap<String, String> = serde_json::from_str(str_arg(options_json, "options_json")?)
            .map_err(|e| Fail(RagmedStatus::InvalidArgument, format!("options_json: {e}")))?;
        let gold = options.keys().next().cloned().unwrap_or_default();
        let q = McQuestion {
            question_id: "ffi".into(),
            stem: "-".into(),
            options,
            gold,
            dataset_tag: DatasetTag::Usmle,
        };
        if let Some((field, msg)) = q.violations().into_iter().next() {
            return Err(Fail(RagmedStatus::InvalidArgument, format!("{field} {msg}")));
        }
        let label = parse_mc_answer(completion, &q).parsed_label.unwrap_or_default();
        let byte = label.bytes().next().unwrap_or(0);
        *label_out = byte as c_char;
        if byte != 0 {
            *label_out.add(1) = 0;
        }
        Ok(())
    })
}
