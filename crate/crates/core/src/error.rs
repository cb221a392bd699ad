use thiserror::Error;

pub type Result<T> = std::result::Result<T, HsfemError>;

#[derive(Debug, Error)]
pub enum HsfemError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("random functions belong to different sample sets")]
    SampleSetMismatch,

    #[error("coefficient is not positive ({value:e}) at element {element} for sample {sample}")]
    NonPositiveCoefficient {
        element: usize,
        sample: usize,
        value: f64,
    },

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("linear solve did not reach tolerance: relative residual {residual:e} > {tolerance:e}")]
    SolveTolerance { residual: f64, tolerance: f64 },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: usize,
        #[source]
        source: Box<HsfemError>,
    },

    #[error("node {node}: {message}")]
    Node { node: usize, message: String },

    #[error("range finder exceeded its limit of {limit} columns (residual {residual:e})")]
    IterationCap { limit: usize, residual: f64 },

    #[error("quantity undefined: {0}")]
    Undefined(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HsfemError {
    /// True for errors that stem from a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            HsfemError::NonPositiveCoefficient { .. }
            | HsfemError::NotPositiveDefinite { .. }
            | HsfemError::SolveTolerance { .. }
            | HsfemError::IterationCap { .. }
            | HsfemError::Undefined(_)
            | HsfemError::Node { .. } => true,
            HsfemError::Sample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
