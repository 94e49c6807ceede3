use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters that can never describe a valid scene or analysis.
    #[error("configuration error: {0}")]
    Config(String),

    /// Regions, maps or frames whose shapes do not line up.
    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("{dimension} {size} is not divisible by binning factor {factor}")]
    NotDivisible {
        dimension: &'static str,
        size: usize,
        factor: usize,
    },

    #[error("mean photon number is zero")]
    ZeroMean,

    /// The data are well formed but outside the regime the estimator covers,
    /// e.g. background exceeding the signal.
    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    #[error("no correlation dip found: minimum sigma {min_sigma:.4} is not below {threshold:.4}")]
    NoCorrelation { min_sigma: f64, threshold: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error at {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
