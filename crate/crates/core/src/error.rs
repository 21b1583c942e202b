use thiserror::Error;

/// Errors produced by the enrichment, skeleton, loss and metrics operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown class id {0}")]
    UnknownClass(u8),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("negative radius {0}")]
    NegativeRadius(f64),

    #[error("degenerate annulus: {0}")]
    DegenerateAnnulus(String),

    #[error("no unique plane: smallest covariance eigenvalues are tied")]
    NoUniquePlane,

    #[error("cross-section curve too short ({len} samples, need at least {min})")]
    CurveTooShort { len: usize, min: usize },

    #[error("root extent not found (status {0})")]
    RootNotFound(String),

    #[error("case excluded: missing required class '{0}'")]
    CaseExcluded(String),

    #[error("no supervision: all class skeletons are empty")]
    NoSupervision,

    #[error("probability field is not normalized")]
    Unnormalized,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown objective '{0}'")]
    UnknownObjective(String),

    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("class map mismatch: {0}")]
    ClassMapMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
}
