use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported Sobol dimension {0}, expected 1..=8")]
    UnsupportedDimension(usize),

    #[error("feature {feature} = {value} outside [{lower}, {upper}]")]
    OutOfRange {
        feature: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid contract: {0}")]
    InvalidContract(String),

    #[error("invalid portfolio: {0}")]
    InvalidPortfolio(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward requested without a cached forward pass")]
    NoForwardCache,

    #[error("model document{}: {msg}", layer.map(|l| format!(", layer {l}")).unwrap_or_default())]
    ModelParse { layer: Option<usize>, msg: String },

    /// Carries the epochs completed before the non-finite loss.
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged {
        epoch: usize,
        log: Vec<crate::surrogate::EpochRecord>,
    },

    #[error("model point optimization produced a non-finite loss at step {step}")]
    OptimizationNaN { step: usize },

    #[error("size error: {0}")]
    Size(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
