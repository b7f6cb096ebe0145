use thiserror::Error;

use crate::systems::Side;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported operator order {order}; supported orders are 2, 4, 6")]
    UnsupportedOrder { order: usize },

    #[error(
        "grid with {n_points} points is too small for order {order}; need at least {required}"
    )]
    GridTooSmall {
        order: usize,
        n_points: usize,
        required: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid system parameter: {0}")]
    InvalidSystem(String),

    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),

    #[error("boundary data on the {side} side has dimension {got}, but the boundary needs {expected} conditions")]
    BoundaryDimension {
        side: Side,
        expected: usize,
        got: usize,
    },

    #[error("boundary condition residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    BoundaryResidual { residual: f64, tolerance: f64 },

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("boundary admissibility violated on the {side} side at t = {t}: inflow count changed from {expected} to {got}")]
    Admissibility {
        side: Side,
        t: f64,
        expected: usize,
        got: usize,
    },

    #[error("solution blew up at t = {t} (norm {norm:.3e})")]
    BlowUp { t: f64, norm: f64 },

    #[error("invalid time interval: {0}")]
    InvalidTime(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("perturbation kind mismatch: series is {series}, requested {requested}")]
    KindMismatch { series: String, requested: String },

    #[error("run {run} failed: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
