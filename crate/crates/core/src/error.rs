use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("provider rejected request with status {status}: {message}")]
    Provider { status: u16, message: String },

    #[error("encoder failed on chunk {chunk_id}: {source}")]
    Encoder {
        chunk_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset line {line}, field {field}: {message}")]
    Dataset {
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("corrupt data: {0}")]
    Data(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stage(stage: &'static str, source: Error) -> Self {
        Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    pub fn context(context: impl Into<String>, source: Error) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(source),
        }
    }

    /// The innermost error, looking through stage and context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. }
            | Error::Context { source, .. }
            | Error::Encoder { source, .. } => source.root(),
            other => other,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::DuplicateDocId(_) => "duplicate_doc_id",
            Error::Contract(_) => "contract",
            Error::Transport { .. } => "transport",
            Error::Provider { .. } => "provider",
            Error::Dataset { .. } => "dataset",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Stage { .. } | Error::Context { .. } | Error::Encoder { .. } => unreachable!(),
        }
    }

    /// Process exit code: 3 config, 4 provider transport, 5 data.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 3,
            Error::Transport { .. } | Error::Provider { .. } => 4,
            _ => 5,
        }
    }
}
