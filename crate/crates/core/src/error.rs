use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("annotation {annotation_id} references unknown category {category_id}")]
    UnknownCategory { annotation_id: u64, category_id: u64 },

    #[error("annotation {annotation_id} references unknown image {image_id}")]
    UnknownImage { annotation_id: u64, image_id: u64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("relation table probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },

    #[error("protocol error: {message}")]
    Protocol { message: String, raw: String },

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("infeasible synthetic spec: {0}")]
    SpecInfeasible(String),

    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl Error {
    /// Builds a parse error from a `serde_json` failure, converting its
    /// line/column position back into a byte offset within `text`.
    pub fn from_json(err: serde_json::Error, text: &str) -> Self {
        let (line, column) = (err.line(), err.column());
        Error::Parse {
            offset: byte_offset(text, line, column),
            line,
            column,
            message: err.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Failures reported by an agent transport.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum AgentError {
    #[error("agent unavailable at {endpoint} after {attempts} attempt(s): {reason}")]
    Unavailable {
        endpoint: String,
        attempts: u32,
        reason: String,
    },

    #[error("credential error for {endpoint}: {reason}")]
    Credential { endpoint: String, reason: String },

    #[error("agent protocol error: {message}")]
    Protocol { message: String, raw: String },
}
