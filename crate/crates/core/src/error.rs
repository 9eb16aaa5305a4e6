use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite vehicle state: {0}")]
    NonFiniteState(String),
    #[error("invalid integration step {0} s (must be in (0, 0.05])")]
    InvalidStep(f64),
    #[error("reference path exhausted at station {station:.3} m (length {length:.3} m)")]
    PathExhausted { station: f64, length: f64 },
    #[error("bad waypoints: {0}")]
    BadWaypoints(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty episodic memory")]
    EmptyMemory,
    #[error("driving log too short: {len} rows for a window of {window} steps")]
    LogTooShort { len: usize, window: usize },
    #[error("vehicle speed {0} m/s too low for the linearized error model")]
    SpeedTooLow(f64),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("vehicle left the path: lateral error {lateral:.2} m at t = {time:.1} s")]
    OffPath { lateral: f64, time: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
