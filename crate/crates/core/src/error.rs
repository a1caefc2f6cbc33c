use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance matrix is degenerate: {0}")]
    DegenerateCovariance(String),

    #[error(
        "series for the bivariate gamma density did not converge after {terms} terms (z = {z})"
    )]
    SeriesNonConvergence { terms: usize, z: f64 },

    #[error("quadrature failed to reach tolerance: estimate {estimate:e}, error {error:e} after {intervals} intervals")]
    Quadrature {
        estimate: f64,
        error: f64,
        intervals: usize,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateCovariance(_)
                | Error::SeriesNonConvergence { .. }
                | Error::Quadrature { .. }
        )
    }
}
