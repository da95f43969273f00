//! Command-line interface. [`run`] takes argv and output streams so it can
//! be driven in-process.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::augmenter::{augment, AugmentToggles};
use crate::config::{Needs, PipelineConfig};
use crate::corpus::{ingest, read_documents, IngestOptions};
use crate::error::{Error, Result};
use crate::eval::{ablation_matrix, evaluate, load_dataset, stage_label, summary_csv, write_reports};
use crate::reader::{DatasetTag, McQuestion};
use crate::refiner::{refine, RefineToggles};
use crate::retrieval::{mine_training_examples, HybridIndex, IndexKinds, RetrieverVariant, ScoredPassage, Stage};

pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ragmed", version, about = "Retrieval-augmented multiple-choice medical QA")]
pub struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config cache directory.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Overrides paths.store.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Overrides paths.index.
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    /// Validate the configuration and print the stage plan; no provider
    /// calls are made.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment a JSON-lines document file into a chunk store.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split on every period, abbreviations included.
        #[arg(long)]
        strict_period_split: bool,
    },
    /// Build sparse and/or dense indexes over a chunk store.
    Index {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        kinds: KindArgs,
    },
    /// Retrieve passages for a query.
    Search {
        #[arg(long)]
        q: String,
        #[arg(long, default_value_t = 32)]
        k: usize,
        /// Retriever variant; defaults to the configured one.
        #[arg(long)]
        variant: Option<RetrieverVariant>,
    },
    /// Rewrite and expand a question.
    Augment {
        #[arg(long)]
        q: String,
        #[arg(long)]
        no_rewrite: bool,
        #[arg(long)]
        no_expand: bool,
    },
    /// Filter and recompose passages for a question.
    Refine {
        #[arg(long)]
        q: String,
        /// JSON lines with `chunk_id` and `text`.
        #[arg(long)]
        passages: PathBuf,
    },
    /// Answer a question (inline text with `A) ...` option lines, or a
    /// dataset file).
    Answer {
        #[arg(long)]
        q: String,
        #[arg(long)]
        tag: Option<DatasetTag>,
    },
    /// Evaluate the configured pipeline on a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tag: Option<DatasetTag>,
    },
    /// Run the component and retriever ablation rows.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tag: Option<DatasetTag>,
    },
    /// Mine retriever training examples.
    Mine {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tag: Option<DatasetTag>,
    },
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct KindArgs {
    #[arg(long)]
    sparse: bool,
    #[arg(long)]
    dense: bool,
    #[arg(long)]
    both: bool,
}

impl KindArgs {
    fn kinds(&self) -> IndexKinds {
        if self.sparse {
            IndexKinds::Sparse
        } else if self.dense {
            IndexKinds::Dense
        } else {
            IndexKinds::Both
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Index { .. } => "index",
            Command::Search { .. } => "search",
            Command::Augment { .. } => "augment",
            Command::Refine { .. } => "refine",
            Command::Answer { .. } => "answer",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Mine { .. } => "mine",
        }
    }

    fn needs(&self, cfg: &PipelineConfig) -> Needs {
        let retrieval = cfg.stages.retriever.is_some();
        match self {
            Command::Ingest { .. } | Command::Augment { .. } | Command::Refine { .. } => Needs::default(),
            Command::Index { .. } => Needs {
                store: true,
                index: false,
            },
            Command::Search { .. } | Command::Mine { .. } => Needs {
                store: true,
                index: true,
            },
            Command::Answer { .. } | Command::Eval { .. } => Needs {
                store: retrieval,
                index: retrieval,
            },
            // variant rows always retrieve
            Command::Ablate { .. } => Needs {
                store: true,
                index: true,
            },
        }
    }

    fn plan(&self, cfg: &PipelineConfig) -> Vec<String> {
        let stages = cfg.stage_toggles();
        match self {
            Command::Answer { .. } | Command::Eval { .. } => stages.plan().iter().map(|s| s.to_string()).collect(),
            Command::Ablate { .. } => crate::eval::ablation_rows(&stages)
                .into_iter()
                .map(|(label, t)| format!("{label}: {}", t.plan().join(" -> ")))
                .collect(),
            Command::Augment { no_rewrite, no_expand, .. } => {
                let mut p = Vec::new();
                if !no_rewrite {
                    p.push("rewrite".into());
                }
                if !no_expand {
                    p.push("expand".into());
                }
                p
            }
            Command::Refine { .. } => vec!["relevance".into(), "decompose".into(), "usefulness".into(), "recompose".into()],
            Command::Search { variant, .. } => {
                vec![format!("retrieve:{}", variant.or(stages.retriever).unwrap_or(RetrieverVariant::Hybrid))]
            }
            Command::Index { kinds, .. } => vec![format!("index:{:?}", kinds.kinds()).to_lowercase()],
            Command::Ingest { .. } => vec!["ingest".into()],
            Command::Mine { .. } => vec!["closed-book read".into(), "bm25 recall".into(), "per-passage read".into()],
        }
    }
}

/// Machine-readable failure record written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ErrorRecord {
    pub fn from_error(e: &Error) -> Self {
        let (violations, line, field) = match e.root() {
            Error::Config(v) => (v.clone(), None, None),
            Error::Dataset { line, field, .. } => (Vec::new(), Some(*line), Some(field.clone())),
            _ => (Vec::new(), None, None),
        };
        Self {
            error: e.kind(),
            exit_code: e.exit_code(),
            message: e.to_string(),
            violations,
            line,
            field,
        }
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
}

fn emit_line<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let s = serde_json::to_string(value)?;
    writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
}

/// Parse argv and run; returns the process exit code.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let record = json!({"error": "usage", "exit_code": EXIT_USAGE, "message": e.to_string()});
            let _ = writeln!(err, "{record}");
            return EXIT_USAGE;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).try_init();
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let record = ErrorRecord::from_error(&e);
            let _ = writeln!(err, "{}", serde_json::to_string(&record).unwrap_or_default());
            record.exit_code
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = &cli.cache_dir {
        cfg.cache_dir = Some(c.clone());
    }
    if let Some(s) = &cli.store {
        cfg.paths.store = Some(s.clone());
    }
    if let Some(i) = &cli.index {
        cfg.paths.index = Some(i.clone());
    }
    Ok(cfg)
}

fn require_file(flag: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(vec![format!("{flag} does not exist: {}", path.display())]))
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let cmd = &cli.command;
    match cmd {
        Command::Ingest { input, .. } => require_file("--in", input)?,
        Command::Refine { passages, .. } => require_file("--passages", passages)?,
        Command::Eval { dataset, .. } | Command::Ablate { dataset, .. } | Command::Mine { dataset, .. } => {
            require_file("--dataset", dataset)?
        }
        _ => {}
    }
    cfg.validate(cmd.needs(&cfg))?;
    if cli.dry_run {
        return emit(
            out,
            &json!({
                "command": cmd.name(),
                "plan": cmd.plan(&cfg),
                "config": serde_json::to_value(&cfg)?,
            }),
        );
    }

    match cmd {
        Command::Ingest {
            input,
            out: dir,
            strict_period_split,
        } => {
            let opts = if *strict_period_split {
                IngestOptions::strict_period_split()
            } else {
                IngestOptions::default()
            };
            let docs = read_documents(input)?;
            let (store, report) = ingest(docs, &opts)?;
            store.save(dir)?;
            emit(out, &json!({"report": report, "stats": store.stats()}))
        }
        Command::Index { out: dir, kinds } => {
            let store = cfg.load_store()?;
            let index = HybridIndex::build(store, &cfg.providers()?, kinds.kinds())?;
            index.save(dir)?;
            emit(
                out,
                &json!({
                    "chunks": index.store().len(),
                    "sparse": index.sparse().is_some(),
                    "dense": index.dense().is_some(),
                }),
            )
        }
        Command::Search { q, k, variant } => {
            let index = cfg.load_index()?;
            let mut params = cfg.retrieval;
            params.final_depth = *k;
            params.sparse_depth = params.sparse_depth.max(*k);
            params.dense_depth = params.dense_depth.max(*k);
            let variant = variant.or(cfg.stages.retriever).unwrap_or(RetrieverVariant::Hybrid);
            let (hits, _) = index.retrieve(&cfg.providers()?, q, &params, variant)?;
            for h in &hits {
                emit_line(out, h)?;
            }
            Ok(())
        }
        Command::Augment { q, no_rewrite, no_expand } => {
            let toggles = AugmentToggles {
                rewrite: !no_rewrite,
                expand: !no_expand,
            };
            let aq = augment(q, cfg.providers()?.chat.as_ref(), &cfg.templates()?, toggles)?;
            emit(out, &aq)
        }
        Command::Refine { q, passages } => {
            let ps = read_passages(passages)?;
            let toggles = RefineToggles {
                relevance: cfg.stages.relevance,
                usefulness: cfg.stages.usefulness,
            };
            let splitter = crate::text::SentenceSplitter::default();
            let r = refine(q, &ps, cfg.providers()?.chat.as_ref(), &cfg.templates()?, toggles, &splitter)?;
            emit(out, &r)
        }
        Command::Answer { q, tag } => {
            let questions = if Path::new(q).is_file() {
                load_dataset(Path::new(q), *tag)?
            } else {
                vec![question_from_text(q, tag.unwrap_or(DatasetTag::Usmle))?]
            };
            let pipeline = cfg.pipeline()?;
            for question in &questions {
                let (trace, answer) = pipeline.answer(question);
                let answer = answer?;
                emit_line(
                    out,
                    &json!({
                        "question_id": question.question_id,
                        "parsed_label": answer.parsed_label,
                        "confidence_note": answer.confidence_note,
                        "raw_completion": answer.raw_completion,
                        "trace_digest": trace.digest(),
                        "trace": trace,
                    }),
                )?;
            }
            Ok(())
        }
        Command::Eval { dataset, out: dir, tag } => {
            let questions = load_dataset(dataset, *tag)?;
            let pipeline = cfg.pipeline()?;
            let run = evaluate(&questions, &pipeline, cfg.concurrency, &stage_label(&pipeline.stages))?;
            let runs = [run];
            write_reports(dir, "eval", &runs)?;
            write!(out, "{}", summary_csv(&runs)?).map_err(|e| Error::io("<stdout>", e))
        }
        Command::Ablate { dataset, out: dir, tag } => {
            let questions = load_dataset(dataset, *tag)?;
            let mut base = cfg.pipeline()?;
            if base.index.is_none() {
                base.index = Some(cfg.load_index()?);
            }
            let runs = ablation_matrix(&questions, &base, cfg.concurrency)?;
            write_reports(dir, "ablation", &runs)?;
            write!(out, "{}", summary_csv(&runs)?).map_err(|e| Error::io("<stdout>", e))
        }
        Command::Mine { dataset, out: path, tag } => {
            let questions = load_dataset(dataset, *tag)?;
            let index = cfg.load_index()?;
            let sparse = index
                .sparse()
                .ok_or_else(|| Error::Data("mining needs a sparse index (BM25 lives there)".into()))?;
            let outcome = mine_training_examples(
                &questions,
                sparse,
                cfg.providers()?.chat.as_ref(),
                &cfg.templates()?,
                &cfg.retrieval,
                cfg.seed,
            )?;
            let mut body = String::new();
            for ex in &outcome.examples {
                body.push_str(&serde_json::to_string(ex)?);
                body.push('\n');
            }
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
            emit(
                out,
                &json!({
                    "examples": outcome.examples.len(),
                    "empty_positive": outcome.examples.iter().filter(|e| e.empty_positive).count(),
                    "skipped_correct": outcome.skipped_correct.len(),
                }),
            )
        }
    }
}

fn read_passages(path: &Path) -> Result<Vec<ScoredPassage>> {
    #[derive(serde::Deserialize)]
    struct Rec {
        chunk_id: String,
        text: String,
        #[serde(default)]
        score: f64,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: Rec = serde_json::from_str(l).map_err(|e| Error::Dataset {
                line: i + 1,
                field: "<record>".into(),
                message: e.to_string(),
            })?;
            Ok(ScoredPassage {
                chunk_id: r.chunk_id,
                text: r.text,
                score: r.score,
                stage: Stage::Reranked,
            })
        })
        .collect()
}

/// Inline question: stem lines followed by `X) option` lines. With no gold
/// known, the first label stands in so the question validates.
pub fn question_from_text(text: &str, tag: DatasetTag) -> Result<McQuestion> {
    let mut stem = Vec::new();
    let mut options = std::collections::BTreeMap::new();
    for line in text.lines() {
        let t = line.trim();
        let b = t.as_bytes();
        if b.len() >= 2 && b[0].is_ascii_uppercase() && b[1] == b')' {
            options.insert(t[..1].to_string(), t[2..].trim().to_string());
        } else if options.is_empty() {
            stem.push(line);
        } else {
            return Err(Error::Config(vec![format!("--q: text after the options: {t:?}")]));
        }
    }
    let gold = options.keys().next().cloned().unwrap_or_default();
    let q = McQuestion {
        question_id: "cli".into(),
        stem: stem.join("\n").trim().to_string(),
        options,
        gold,
        dataset_tag: tag,
    };
    if let Some((field, msg)) = q.violations().into_iter().next() {
        return Err(Error::Config(vec![format!("--q: {field} {msg}")]));
    }
    Ok(q)
}
