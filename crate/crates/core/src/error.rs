use thiserror::Error;

pub type Result<V> = std::result::Result<V, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value produced or consumed by {op}")]
    NonFinite { op: &'static str },

    #[error("matrix not positive definite (leading minor {minor}, jitter {jitter:e})")]
    NotPositiveDefinite { minor: usize, jitter: f64 },

    #[error("backward requires a 1x1 output, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },

    #[error("non-finite gradient for parameter tensor {index}")]
    NonFiniteGradient { index: usize },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} is not supported by this model")]
    Unsupported(&'static str),

    #[error("dataset error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("training aborted on task ({region}, {attribute}): {source}")]
    TrainingAborted {
        region: String,
        attribute: String,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numerics (Cholesky breakdown, NaN/inf),
    /// as opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::NonFiniteGradient { .. } => true,
            Error::TrainingAborted { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
