use std::path::PathBuf;

/// Errors produced anywhere in the graph-construction and evaluation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `line` is the 1-based physical line number.
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Rank-deficient regression design (constant or collinear lag columns).
    #[error("degenerate regression: {0}")]
    DegenerateFit(String),

    /// Both nested models fit the data exactly, so no F statistic exists.
    #[error("F-test undecidable: restricted and unrestricted residuals are both zero")]
    Undecidable,

    /// The spatial-temporal lag for the pair is undefined.
    #[error("pair not alignable: lag undefined")]
    NotAlignable,

    #[error("empty graph: {0}")]
    EmptyGraph(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: &std::path::Path, e: serde_json::Error) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors caused by bad inputs or configuration rather than by
    /// the computation itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Invalid(_)
                | Error::Config(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
