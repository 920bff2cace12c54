use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The truncation is too shallow for the requested quantity to be
    /// determined by the stored data.
    #[error("truncation depth insufficient: {0}")]
    DepthInsufficient(String),

    #[error("energy {lambda} outside the band [-2*sqrt(q), 2*sqrt(q)]")]
    OutOfBand { lambda: f64 },

    #[error("band edge is a singular point of the requested quantity")]
    BandEdgeSingularity,

    /// Spectral parameter hits a pole or an eigenvalue.
    #[error("singular spectral parameter: {0}")]
    SingularParameter(String),

    /// Spectral parameter in (or too close to) the exceptional set.
    #[error("exceptional spectral parameter: {0}")]
    ExceptionalParameter(String),

    #[error("interval meets the exceptional set: {0}")]
    ExceptionalInterval(String),

    /// Interior block of a boundary problem is singular.
    #[error("Dirichlet problem singular: {0}")]
    DirichletSingular(String),

    #[error("scan inconclusive near range boundary: {0}")]
    InconclusiveRange(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    /// Malformed graph input (ends, connectivity, degrees...).
    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("input format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
