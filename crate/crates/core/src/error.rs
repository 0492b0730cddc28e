use thiserror::Error;

/// Errors surfaced by recoverable operations (I/O, configuration, data
/// feasibility, linear solves). Contract violations on internal numeric
/// operations (dimension mismatches, out-of-range sparsity) panic instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("idx parse error in {path}: {reason}")]
    IdxFormat { path: String, reason: String },

    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("infeasible partition request: {0}")]
    Infeasible(String),

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),

    #[error("singular system: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig(vec![format!("{field}: {}", reason.into())])
    }
}
