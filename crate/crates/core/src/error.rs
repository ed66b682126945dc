use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient history for series '{0}'")]
    InsufficientHistory(String),

    #[error("series '{0}' has zero variance")]
    DegenerateSeries(String),

    #[error("rank-one downdate is singular (1 - r'M^-1 r = {0:e})")]
    DowndateSingular(f64),

    #[error("constraint covariance Q is not positive definite: {0}")]
    DegenerateConstraint(String),

    #[error("prior misfit: {0}")]
    PriorMisfit(String),

    #[error("relative score undefined for '{0}': base score is zero")]
    UndefinedRatio(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input) get their own exit code in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotSpd(_)
                | Error::DowndateSingular(_)
                | Error::DegenerateConstraint(_)
                | Error::PriorMisfit(_)
                | Error::UndefinedRatio(_)
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidHierarchy(_) => "invalid_hierarchy",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NotSpd(_) => "not_spd",
            Error::InsufficientData(_) => "insufficient_data",
            Error::InsufficientHistory(_) => "insufficient_history",
            Error::DegenerateSeries(_) => "degenerate_series",
            Error::DowndateSingular(_) => "downdate_singular",
            Error::DegenerateConstraint(_) => "degenerate_constraint",
            Error::PriorMisfit(_) => "prior_misfit",
            Error::UndefinedRatio(_) => "undefined_ratio",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
