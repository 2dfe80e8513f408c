use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no sunrise or sunset at latitude {latitude_deg} deg on day {day_of_year}")]
    NoSunrise { latitude_deg: f64, day_of_year: u32 },

    #[error("alignment failure: lag {lag} is not below half the series length {len}")]
    AlignmentFailure { lag: i64, len: usize },

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("matrix is not positive definite after jitter up to {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("degenerate training data: {0}")]
    Degenerate(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
