use thiserror::Error;

use crate::ApId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell ({i}, {j}) outside {width}x{height} grid")]
    CellOutOfRange {
        i: usize,
        j: usize,
        width: usize,
        height: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),

    #[error("access point `{0}` is not modeled")]
    UnknownAp(ApId),

    #[error("access point `{0}` has no training samples")]
    MissingSamples(ApId),

    #[error("all samples are co-located; spatial length scale is unobservable")]
    RankDeficient,

    #[error("covariance not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("need at least 3 shared access points, found {shared}")]
    InsufficientOverlap { shared: usize },

    #[error("correspondence lists differ in length ({src} vs {dst})")]
    LengthMismatch { src: usize, dst: usize },

    #[error("total correspondence weight must be positive")]
    ZeroWeight,

    #[error("alignment between `{0}` and `{1}` was not accepted")]
    NotAccepted(String, String),

    #[error("config: {0}")]
    Config(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
