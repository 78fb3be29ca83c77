//! Error type shared by every subsystem.
//!
//! Each variant carries a stable `kind()` string that the CLI prints on
//! stderr and tests assert on, so error identities stay part of the
//! public contract rather than being format-string trivia.

use thiserror::Error;

/// Position-annotated DSL parse failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DslParseDetail {
    /// 1-based line of the offending token.
    pub line: usize,
    /// 1-based column of the offending token.
    pub column: usize,
    /// Tokens that would have been accepted at this position.
    pub expected: Vec<String>,
    /// What was actually found.
    pub found: String,
}

impl std::fmt::Display for DslParseDetail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "line {}, column {}: expected {}, found {}",
            self.line,
            self.column,
            self.expected.join(" | "),
            self.found
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind} '{name}' version {version} is already registered")]
    DuplicateVersion {
        kind: &'static str,
        name: String,
        version: u32,
    },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("unknown entity '{name}' version {version}")]
    UnknownEntity { name: String, version: u32 },

    #[error("dsl parse error at {0}")]
    DslParse(DslParseDetail),

    #[error("schema conflict: {0}")]
    SchemaConflict(String),

    #[error("immutable field change: '{field}' cannot be updated in place; register a new version")]
    ImmutableFieldChange { field: String },

    #[error("{kind} '{what}' not found")]
    NotFound { kind: &'static str, what: String },

    #[error("unknown column '{0}'")]
    UnknownColumn(String),

    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("source unavailable: {0}")]
    SourceUnavailable(String),

    #[error("source schema mismatch: {0}")]
    SourceSchemaMismatch(String),

    #[error("transform output schema error: {0}")]
    TransformOutputSchema(String),

    #[error("unknown transform hook '{0}'")]
    UnknownTransformHook(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("store io error at {path}: {source}")]
    StoreIo {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("no sink enabled for '{name}' version {version}")]
    NoSinkEnabled { name: String, version: u32 },

    #[error("window overlaps backfill job {job_id}")]
    OverlapWithRunningBackfill { job_id: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("retry attempts exhausted for job {job_id} (attempt {attempt} of {max_attempts})")]
    AttemptsExhausted {
        job_id: String,
        attempt: u32,
        max_attempts: u32,
    },

    #[error("unknown feature '{feature}' in feature set '{name}' version {version}")]
    UnknownFeature {
        name: String,
        version: u32,
        feature: String,
    },

    #[error("entity mismatch: {0}")]
    EntityMismatch(String),

    #[error("injected fault: merge of {sink} for job {job_id} failed")]
    InjectedFailure { job_id: String, sink: &'static str },

    #[error("injected abort during job {job_id} before {sink} merge")]
    InjectedAbort { job_id: String, sink: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("bad json in {path}: {message}")]
    Encoding { path: String, message: String },
}

impl Error {
    /// Stable machine-readable identity of the error.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DuplicateVersion { .. } => "DuplicateVersion",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::UnknownEntity { .. } => "UnknownEntity",
            Error::DslParse(_) => "DslParseError",
            Error::SchemaConflict(_) => "SchemaConflict",
            Error::ImmutableFieldChange { .. } => "ImmutableFieldChange",
            Error::NotFound { .. } => "NotFound",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::TypeMismatch(_) => "TypeMismatch",
            Error::SourceUnavailable(_) => "SourceUnavailable",
            Error::SourceSchemaMismatch(_) => "SourceSchemaMismatch",
            Error::TransformOutputSchema(_) => "TransformOutputSchemaError",
            Error::UnknownTransformHook(_) => "UnknownTransformHook",
            Error::InvalidRecord(_) => "InvalidRecord",
            Error::StoreIo { .. } => "StoreIoError",
            Error::NoSinkEnabled { .. } => "NoSinkEnabled",
            Error::OverlapWithRunningBackfill { .. } => "OverlapWithRunningBackfill",
            Error::InvalidState(_) => "InvalidState",
            Error::AttemptsExhausted { .. } => "AttemptsExhausted",
            Error::UnknownFeature { .. } => "UnknownFeature",
            Error::EntityMismatch(_) => "EntityMismatch",
            Error::InjectedFailure { .. } => "InjectedFailure",
            Error::InjectedAbort { .. } => "InjectedAbort",
            Error::Io(_) => "IoError",
            Error::Encoding { .. } => "EncodingError",
        }
    }

    pub(crate) fn store_io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Error {
        Error::StoreIo {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
