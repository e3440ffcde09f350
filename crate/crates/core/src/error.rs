use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("conductance {value} on edge {edge} violates ellipticity (must be finite and > 0)")]
    Ellipticity { edge: usize, value: f64 },

    #[error("pockets {first} and {second} overlap")]
    OverlappingPockets { first: usize, second: usize },

    #[error("pocket {index} does not fit inside the box")]
    PocketOutsideBox { index: usize },

    #[error("fields live on different boxes")]
    BoxMismatch,

    #[error("site {0:?} is not inside the box")]
    SiteOutsideBox(Vec<i64>),

    #[error("state space of dimension {dim} exceeds the size budget {budget}")]
    SizeBudget { dim: usize, budget: usize },

    #[error("exact Gibbs enumeration refused for {sites} sites (limit {limit})")]
    EnumerationTooLarge { sites: usize, limit: usize },

    #[error("time step {dt} is unstable; use dt <= {suggested}")]
    Stability { dt: f64, suggested: f64 },

    #[error("white noise has no pointwise value; it is only consumed through stochastic integrals")]
    WhiteNoisePointwise,

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("probe precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
