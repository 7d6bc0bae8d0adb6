use thiserror::Error;

/// Every failure the library can report. Variants split into caller mistakes
/// (bad inputs, invalid models) and numerical breakdowns; see [`Error::is_numeric`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid DGP: {0}")]
    InvalidDgp(String),
    #[error("design error: {0}")]
    Design(String),
    #[error("infeasible budget: {0}")]
    Infeasible(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("insufficient variation: {0}")]
    InsufficientVariation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// True when the failure comes from the numerics rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Singular(_) | Error::InsufficientVariation(_) | Error::Numeric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
