//! Crate-wide error type.
//!
//! Per-line input problems are *not* errors: they go to the
//! [`RejectLog`](crate::ingest::RejectLog) so a single bad row cannot kill a
//! 10^8-row run. `Error` is reserved for conditions that invalidate a whole
//! operation.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("duplicate cell_id in tower file: {0}")]
    DuplicateTower(String),

    #[error("duplicate unit_id at level {level}: {unit}")]
    DuplicateUnit { level: String, unit: String },

    #[error("tower registry is empty")]
    EmptyRegistry,

    #[error("invalid polygon for unit {unit}: {reason}")]
    InvalidPolygon { unit: String, reason: String },

    #[error("vector has zero norm")]
    ZeroNorm,

    #[error("degenerate field: all values equal")]
    DegenerateField,

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("too few paired units: {got} < {min}")]
    TooFewUnits { got: usize, min: usize },

    #[error("empty calibration table")]
    EmptyCalibration,

    #[error("too few users to calibrate: {got} < {min}")]
    TooFewUsers { got: usize, min: usize },

    #[error("missing population weights for population-weighted aggregation")]
    MissingWeights,

    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<String>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
