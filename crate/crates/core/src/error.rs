use thiserror::Error;

/// Errors surfaced by the optimization and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("unsupported DoF regime: M={m}, Q={q} (closed form covers M <= Q or M in {{2Q, .., KQ}})")]
    UnsupportedRegime { m: usize, q: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid modulation order {0} (expected 4, 16, 64 or 256)")]
    InvalidModulation(usize),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable snake-case tag for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::Dimension(_) => "dimension",
            Error::NonFinite(_) => "non_finite",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::EmptySampleSet => "empty_sample_set",
            Error::UnsupportedRegime { .. } => "unsupported_regime",
            Error::Unsupported(_) => "unsupported",
            Error::InvalidModulation(_) => "invalid_modulation",
            Error::Solver(_) => "solver",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
