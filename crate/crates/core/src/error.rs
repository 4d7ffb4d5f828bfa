//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter validation failure.
    #[error("config error: {0}")]
    Config(String),

    /// Mathematically undefined input (e.g. cot(0) in the displacement-referred
    /// spectrum at θ = 0).
    #[error("domain error: {0}")]
    Domain(String),

    /// The detected spectrum never drops below shot noise.
    #[error("no squeezing: spectrum minimum {min} is not below 1")]
    NoSqueezing { min: f64 },

    /// Numeric failure: fit non-convergence, unresolved peaks, and similar.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Beat-note demodulation could not locate the carrier.
    #[error("carrier not found: strongest line at {found_hz} Hz, expected within {tol_hz} Hz of {expected_hz} Hz")]
    CarrierNotFound {
        expected_hz: f64,
        found_hz: f64,
        tol_hz: f64,
    },

    /// Phase drift exceeds what the tracker can follow.
    #[error("unstable phase tracking: drift rate {rate} rad/s exceeds limit {limit} rad/s")]
    PhaseTracking { rate: f64, limit: f64 },

    /// Trace files produced under different configurations.
    #[error("config hash mismatch: {a} vs {b} (use --force to override)")]
    HashMismatch { a: String, b: String },

    /// Malformed trace file.
    #[error("trace format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 2 config/validation, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::HashMismatch { .. } => 2,
            Error::NoSqueezing { .. }
            | Error::Numeric(_)
            | Error::CarrierNotFound { .. }
            | Error::PhaseTracking { .. } => 3,
            Error::Io(_) | Error::Format(_) | Error::Json(_) => 4,
        }
    }
}
