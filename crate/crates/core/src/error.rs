use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoresetError>;

#[derive(Debug, Error)]
pub enum CoresetError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dataset is empty or has zero total weight")]
    EmptyDataset,

    #[error("invalid weight {weight} for point {id}")]
    InvalidWeight { id: u64, weight: f64 },

    #[error("trim weight z = {z} must satisfy 0 <= z < total weight {total}")]
    TrimTooLarge { z: f64, total: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {id} has no label but the model is supervised")]
    MissingLabel { id: u64 },

    #[error("Bregman loss requires a gradient bound L (bregman_L)")]
    MissingBregmanBound,

    #[error("sensitivity denominator is not positive over the ball ({value}); use a smaller radius")]
    NonPositiveDenominator { value: f64 },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("fewer than {k} distinct points ({distinct})")]
    TooFewDistinctPoints { k: usize, distinct: usize },

    #[error("duplicate point id {0}")]
    DuplicateId(u64),

    #[error("unknown point id {0}")]
    UnknownId(u64),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed input: {0}")]
    Malformed(String),
}

impl CoresetError {
    /// True for failures of the numerical machinery, as opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CoresetError::NonPositiveDenominator { .. }
                | CoresetError::NoConvergence { .. }
                | CoresetError::DegenerateSample(_)
        )
    }
}
