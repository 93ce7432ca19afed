use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or run parameter is outside its admissible range.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    /// A value handed to one of the closure functions is outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A noise draw lies outside the admissible support; the caller resamples.
    #[error("noise draw {xi} exceeds admissible bound {bound}")]
    RejectedDraw { xi: f64, bound: f64 },

    #[error("time step {dt} exceeds the positivity bound {bound}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("singular tridiagonal system (pivot {pivot:e} at row {row})")]
    SingularSystem { pivot: f64, row: usize },

    #[error("non-finite state at tau = {tau}: {detail}")]
    NonFinite { tau: f64, detail: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate stationary profile: {0}")]
    Degenerate(String),

    #[error("malformed input: {0}")]
    Input(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }
}
