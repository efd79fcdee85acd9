use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    #[error("noise scale is undefined where the true gradient vanishes")]
    UndefinedAtMinimum,

    #[error("degenerate norm pair: b_small = {b_small}, b_big = {b_big}")]
    DegeneratePair { b_small: usize, b_big: usize },

    #[error("non-positive curvature along the gradient (GᵀHG = {0})")]
    NegativeCurvature(f64),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("ill-conditioned fit: {0}")]
    IllConditionedFit(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no viable learning rate for batch size {batch_size}: every run diverged")]
    NoViableLr { batch_size: usize },

    #[error("ill-posed spectrum: {0}")]
    IllPosedSpectrum(String),

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("window of {window} steps is too short (tracker warm-up is {warmup})")]
    InsufficientWindow { window: usize, warmup: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
