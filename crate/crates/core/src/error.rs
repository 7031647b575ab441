use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two grids (dims or spacing) that must agree do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("index {index:?} out of bounds for dims {dims:?}")]
    OutOfBounds {
        index: (usize, usize, usize),
        dims: (usize, usize, usize),
    },

    /// Malformed NIfTI header or data section; `field` names the offending entry.
    #[error("{path}: malformed header field `{field}`: {reason}")]
    Format {
        path: PathBuf,
        field: &'static str,
        reason: String,
    },

    #[error("{path}: unsupported NIfTI datatype code {code}")]
    UnsupportedDatatype { path: PathBuf, code: i16 },

    #[error("{path}: parse error at token {position} (`{token}`): {reason}")]
    Parse {
        path: PathBuf,
        position: usize,
        token: String,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("coefficient of variation undefined: mean is zero")]
    UndefinedCv,

    #[error("Hausdorff distance undefined: {0} mask is empty")]
    UndefinedDistance(&'static str),

    #[error("degenerate regressor: x values are constant")]
    DegenerateRegressor,

    #[error("degenerate reference: standard deviation is zero")]
    DegenerateReference,

    #[error("undefined percentage difference: reference value at index {0} is zero")]
    ZeroReference(usize),

    #[error("gestational age {ga} weeks is outside the model range: {reason}")]
    ModelRange { ga: f64, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
