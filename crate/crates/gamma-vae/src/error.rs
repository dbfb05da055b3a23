//! Crate-wide error type.

use crate::training::EpochMetrics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible array or layer dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input outside the valid domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input file.
    #[error("parse error in {path} (line {line}): {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Metric factorization failed even after jitter.
    #[error("singular metric at z = {point:?} (jitter {jitter:.3e})")]
    SingularMetric { point: Vec<f64>, jitter: f64 },

    /// Jacobian does not have full column rank.
    #[error("degenerate tangent space: {0}")]
    DegenerateTangent(String),

    /// A loss term evaluated to a non-finite value.
    #[error("non-finite loss: {term}")]
    NonFiniteLoss { term: String },

    /// Training aborted; the log covers the epochs completed before the abort.
    #[error("training diverged at epoch {epoch}: non-finite {term}")]
    Diverged {
        term: String,
        epoch: usize,
        partial_log: Vec<EpochMetrics>,
    },

    /// Too few points for a statistic that needs at least two.
    #[error("insufficient points: {0}")]
    InsufficientPoints(String),

    /// A split that would leave the training side empty.
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    /// Rank variance is zero, so Spearman correlation is undefined.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// A named feature column does not exist.
    #[error("unknown feature: {0}")]
    UnknownFeature(String),

    /// Refusing to overwrite an existing output without --force.
    #[error("output already exists: {0} (pass --force to overwrite)")]
    OutputExists(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code for the CLI: 2 parse, 3 shape/domain, 4 diverged
    /// training, 5 singular geometry.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Io(_) | Error::Json(_) => 2,
            Error::Shape(_)
            | Error::Domain(_)
            | Error::InsufficientPoints(_)
            | Error::DegenerateSplit(_)
            | Error::UndefinedCorrelation(_)
            | Error::UnknownFeature(_)
            | Error::OutputExists(_)
            | Error::Config(_) => 3,
            Error::NonFiniteLoss { .. } | Error::Diverged { .. } => 4,
            Error::SingularMetric { .. } | Error::DegenerateTangent(_) => 5,
        }
    }
}
