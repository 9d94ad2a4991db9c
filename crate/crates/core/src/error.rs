use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed input data, with a location when one is known.
    #[error("invalid input{}: {message}", location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    InvalidInput {
        message: String,
        location: Option<String>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dates do not align: {0}")]
    Alignment(String),

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("{what} did not converge after {iterations} iterations (last change {last_change:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last_change: f64,
        last_iterate: Vec<f64>,
    },

    #[error("unstable system: companion spectral radius {spectral_radius:.6} >= 1")]
    Unstable { spectral_radius: f64 },

    #[error("internal numerical error: {0}")]
    Internal(String),
}

impl Error {
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput {
            message: message.into(),
            location: None,
        }
    }

    pub(crate) fn invalid_at(message: impl Into<String>, location: impl Into<String>) -> Self {
        Error::InvalidInput {
            message: message.into(),
            location: Some(location.into()),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for failures of an iterative numerical method (CLI exit code 3).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::Internal(_))
    }
}
