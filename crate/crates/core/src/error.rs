use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty region")]
    EmptyRegion,

    #[error("insufficient events: {found} < {required}")]
    InsufficientEvents { found: usize, required: usize },

    #[error("degenerate flow: |v_r| = {0} is below the flow threshold")]
    DegenerateFlow(f64),

    #[error("no converged region in window")]
    NoConvergedRegion,

    #[error("IMU gap of {gap} s exceeds window length {dt} s")]
    ImuGap { gap: f64, dt: f64 },

    #[error("camera moves along the optical axis (v.z = {0})")]
    ZMotion(f64),

    #[error("regions overlap")]
    RegionsOverlap,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
