use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid degrees of freedom: {0}")]
    InvalidDof(f64),
    #[error("orthant probability {0:e} is numerically unreachable")]
    DegenerateOrthant(f64),
    #[error("non-finite input")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("all {0} starts failed")]
    AllStartsFailed(usize),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("cannot parse value at row {row}, column `{col}`")]
    Parse { row: usize, col: String },
    #[error("no data rows")]
    EmptyData,
    #[error("{0} clusters exceeds the supported maximum of 12")]
    TooManyClusters(usize),
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite
                | Error::DegenerateOrthant(_)
                | Error::SingularSystem(_)
                | Error::AllStartsFailed(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
