//! Crate-wide error type with stable, machine-parsable categories.
//!
//! Every CLI failure prints exactly one line of the form
//! `error: <category>: <detail>`, so downstream scripts can dispatch on the
//! category without parsing prose. The FFI layer maps the same categories to
//! integer status codes.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Parallel input files disagree on line counts.
    #[error("line {line}: {detail}")]
    LineCount { line: usize, detail: String },

    /// A token or record failed to parse.
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// Structurally valid input violating a documented invariant.
    #[error("sentence {sentence}: {detail}")]
    Validation { sentence: usize, detail: String },

    /// Bad flag value, inconsistent group spec, or a violated precondition.
    #[error("{0}")]
    Config(String),

    /// File does not start with the expected magic bytes.
    #[error("{path}: expected magic {expected}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: format version {found} (supported: {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("{path}: file ends mid-record")]
    Truncated { path: PathBuf },

    /// Example width or label disagrees with the declared task shape.
    #[error("{0}")]
    WidthMismatch(String),

    /// Vocabulary digest in a model file disagrees with the vocabulary given.
    #[error("{0}")]
    DigestMismatch(String),

    /// A requested feature has no matching model head, or models disagree.
    #[error("{0}")]
    FeatureMismatch(String),

    /// Hypothesis scoring requires alignment links and none were supplied.
    #[error("{0}")]
    MissingAlignment(String),

    /// Evaluation over zero examples is undefined.
    #[error("{0}")]
    EmptyShard(String),
}

impl Error {
    /// Stable one-word category used by the CLI error line and the FFI codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::LineCount { .. } => "line-count",
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::Config(_) => "config",
            Error::BadMagic { .. } => "bad-magic",
            Error::UnsupportedVersion { .. } => "unsupported-version",
            Error::Truncated { .. } => "truncated",
            Error::WidthMismatch(_) => "width-mismatch",
            Error::DigestMismatch(_) => "digest-mismatch",
            Error::FeatureMismatch(_) => "feature-mismatch",
            Error::MissingAlignment(_) => "missing-alignment",
            Error::EmptyShard(_) => "empty-shard",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
