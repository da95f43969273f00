//! Dataset loading, accuracy evaluation, ablation matrices and reports.
//!
//! Dataset records are JSON lines:
//! `{"question_id": "q1", "stem": "...", "options": {"A": "...", "B": "..."},
//! "gold": "B", "dataset_tag": "usmle"}`. `dataset_tag` may be omitted when
//! a default tag is supplied.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::providers::{sha256_hex, CallCounts};
use crate::reader::{DatasetTag, McQuestion, Pipeline, StageToggles};
use crate::retrieval::RetrieverVariant;

pub const DEFAULT_CONCURRENCY: usize = 8;

fn field_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Dataset {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, line: usize, field: &str) -> Result<String> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(field_err(line, field, "must be a string")),
        None => Err(field_err(line, field, "missing")),
    }
}

/// Parse a JSON-lines dataset. Blank lines are skipped; the first bad
/// record aborts with its line number and field.
pub fn load_dataset(path: &Path, default_tag: Option<DatasetTag>) -> Result<Vec<McQuestion>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(raw).map_err(|e| field_err(line, "<record>", e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| field_err(line, "<record>", "not a JSON object"))?;
        let options = match obj.get("options") {
            Some(Value::Object(m)) => m
                .iter()
                .map(|(k, v)| match v {
                    Value::String(s) => Ok((k.clone(), s.clone())),
                    _ => Err(field_err(line, "options", format!("option {k} must be a string"))),
                })
                .collect::<Result<BTreeMap<_, _>>>()?,
            Some(_) => return Err(field_err(line, "options", "must be an object of label to text")),
            None => return Err(field_err(line, "options", "missing")),
        };
        let dataset_tag = match obj.get("dataset_tag") {
            Some(t) => serde_json::from_value(t.clone())
                .map_err(|_| field_err(line, "dataset_tag", "expected usmle, mcmle or medmcqa"))?,
            None => default_tag.ok_or_else(|| field_err(line, "dataset_tag", "missing"))?,
        };
        let q = McQuestion {
            question_id: string_field(obj, line, "question_id")?,
            stem: string_field(obj, line, "stem")?,
            options,
            gold: string_field(obj, line, "gold")?,
            dataset_tag,
        };
        if let Some((field, msg)) = q.violations().into_iter().next() {
            return Err(field_err(line, field, msg));
        }
        out.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub parsed_label: Option<String>,
    pub gold: String,
    pub correct: bool,
    pub trace_digest: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub label: String,
    pub config_digest: String,
    pub dataset_tag: Option<DatasetTag>,
    pub question_count: usize,
    pub correct_count: usize,
    pub accuracy: f64,
    pub records: Vec<QuestionRecord>,
    pub calls: CallCounts,
}

impl EvalRun {
    /// Accuracy as an exact fraction.
    pub fn fraction(&self) -> String {
        format!("{}/{}", self.correct_count, self.question_count)
    }
}

/// Digest of the settings that define a run.
pub fn config_digest(pipeline: &Pipeline) -> String {
    let v = serde_json::json!({
        "stages": pipeline.stages,
        "params": pipeline.params,
        "templates": crate::templates::TemplateId::ALL
            .iter()
            .map(|id| pipeline.templates.get(*id).source().to_string())
            .collect::<Vec<_>>(),
    });
    sha256_hex(v.to_string().as_bytes())
}

/// Answer every question with up to `concurrency` in flight. A failed
/// question counts as incorrect with its error recorded.
pub fn evaluate(questions: &[McQuestion], pipeline: &Pipeline, concurrency: usize, label: &str) -> Result<EvalRun> {
    let (providers, meter) = pipeline.providers.metered();
    let pipeline = Pipeline {
        providers,
        ..pipeline.clone()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    let records: Vec<QuestionRecord> = pool.install(|| {
        questions
            .par_iter()
            .map(|q| {
                let (trace, answer) = pipeline.answer(q);
                let (parsed_label, correct, error) = match answer {
                    Ok(a) => {
                        let c = a.is_correct(q);
                        (a.parsed_label, c, None)
                    }
                    Err(e) => {
                        log::warn!("question {} failed: {e}", q.question_id);
                        (None, false, Some(e.to_string()))
                    }
                };
                QuestionRecord {
                    question_id: q.question_id.clone(),
                    parsed_label,
                    gold: q.gold.clone(),
                    correct,
                    trace_digest: trace.digest(),
                    error,
                }
            })
            .collect()
    });
    let correct_count = records.iter().filter(|r| r.correct).count();
    let tags: std::collections::BTreeSet<DatasetTag> = questions.iter().map(|q| q.dataset_tag).collect();
    Ok(EvalRun {
        label: label.to_string(),
        config_digest: config_digest(&pipeline),
        dataset_tag: (tags.len() == 1).then(|| *tags.iter().next().expect("one tag")),
        question_count: questions.len(),
        correct_count,
        accuracy: if questions.is_empty() {
            0.0
        } else {
            correct_count as f64 / questions.len() as f64
        },
        records,
        calls: meter.counts(),
    })
}

/// Row label for a stage setting. Settings where each component is wholly
/// on or off use the component form, e.g.
/// `augmenter=on retriever=hybrid refiner=off`; anything else names every
/// toggle.
pub fn stage_label(t: &StageToggles) -> String {
    let onoff = |b: bool| if b { "on" } else { "off" };
    let retriever = t.retriever.map_or("off", RetrieverVariant::as_str);
    if t.rewrite == t.expand && t.relevance == t.usefulness {
        format!(
            "augmenter={} retriever={retriever} refiner={}",
            onoff(t.rewrite),
            onoff(t.relevance)
        )
    } else {
        format!(
            "rewrite={} expand={} retriever={retriever} relevance={} usefulness={}",
            onoff(t.rewrite),
            onoff(t.expand),
            onoff(t.relevance),
            onoff(t.usefulness)
        )
    }
}

/// The labelled stage settings of every ablation row: the eight on/off
/// combinations of augmenter, retriever and refiner, then one row per
/// retriever variant with the base augmenter and refiner settings.
pub fn ablation_rows(base: &StageToggles) -> Vec<(String, StageToggles)> {
    let variant = base.retriever.unwrap_or(RetrieverVariant::Hybrid);
    let mut rows = Vec::new();
    for refiner in [false, true] {
        for augmenter in [false, true] {
            for retriever in [false, true] {
                let t = StageToggles::components(augmenter, retriever.then_some(variant), refiner);
                rows.push((stage_label(&t), t));
            }
        }
    }
    for v in RetrieverVariant::ALL {
        rows.push((
            format!("variant={v}"),
            StageToggles {
                retriever: Some(v),
                ..*base
            },
        ));
    }
    rows
}

/// Evaluate every ablation row, recomputing each from scratch.
pub fn ablation_matrix(questions: &[McQuestion], base: &Pipeline, concurrency: usize) -> Result<Vec<EvalRun>> {
    ablation_rows(&base.stages)
        .into_iter()
        .map(|(label, stages)| evaluate(questions, &base.with_stages(stages), concurrency, &label))
        .collect()
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    row: &'a str,
    dataset: &'a str,
    questions: usize,
    correct: usize,
    accuracy: String,
    chat_calls: u64,
    dense_calls: u64,
    sparse_calls: u64,
    score_calls: u64,
    config_digest: &'a str,
}

#[derive(Serialize)]
struct DetailRow<'a> {
    row: &'a str,
    question_id: &'a str,
    parsed_label: &'a str,
    gold: &'a str,
    correct: bool,
    trace_digest: &'a str,
    error: &'a str,
}

fn summary_row(run: &EvalRun) -> SummaryRow<'_> {
    SummaryRow {
        row: &run.label,
        dataset: run.dataset_tag.map(DatasetTag::as_str).unwrap_or("mixed"),
        questions: run.question_count,
        correct: run.correct_count,
        accuracy: format!("{:.4}", run.accuracy),
        chat_calls: run.calls.chat,
        dense_calls: run.calls.dense,
        sparse_calls: run.calls.sparse,
        score_calls: run.calls.score,
        config_digest: &run.config_digest,
    }
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))
}

pub fn summary_csv(runs: &[EvalRun]) -> Result<String> {
    Ok(String::from_utf8(csv_bytes(runs.iter().map(summary_row))?).expect("csv output is utf-8"))
}

pub fn detail_csv(runs: &[EvalRun]) -> Result<String> {
    let rows = runs.iter().flat_map(|run| {
        run.records.iter().map(move |r| DetailRow {
            row: &run.label,
            question_id: &r.question_id,
            parsed_label: r.parsed_label.as_deref().unwrap_or(""),
            gold: &r.gold,
            correct: r.correct,
            trace_digest: &r.trace_digest,
            error: r.error.as_deref().unwrap_or(""),
        })
    });
    Ok(String::from_utf8(csv_bytes(rows)?).expect("csv output is utf-8"))
}

pub fn summary_markdown(runs: &[EvalRun]) -> String {
    let mut s = String::from("| Configuration | Correct | Accuracy (%) | Chat calls |\n|---|---:|---:|---:|\n");
    for r in runs {
        let _ = writeln!(
            s,
            "| {} | {} | {:.2} | {} |",
            r.label,
            r.fraction(),
            r.accuracy * 100.0,
            r.calls.chat
        );
    }
    s
}

/// Write `<name>.csv`, `<name>.md` and `<name>.questions.csv` under `dir`.
/// Reports contain no timings, so identical runs give identical bytes.
pub fn write_reports(dir: &Path, name: &str, runs: &[EvalRun]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (format!("{name}.csv"), summary_csv(runs)?),
        (format!("{name}.md"), summary_markdown(runs)),
        (format!("{name}.questions.csv"), detail_csv(runs)?),
    ];
    let mut written = Vec::new();
    for (file, body) in files {
        let path = dir.join(file);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
