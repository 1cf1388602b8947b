//! Crate-wide error type.

/// Errors surfaced by the simulator, trainer, and harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Elevation angle is undefined because the UAV and BS coincide.
    #[error("undefined elevation angle: UAV and base station positions coincide")]
    UndefinedElevation,

    /// A linear SNR was negative where only non-negative values make sense.
    #[error("negative linear SNR: {0}")]
    NegativeSnr(f64),

    /// Requested repetition factor is outside the configured range.
    #[error("k_max {got} outside valid range 1..={cap}")]
    KMaxOutOfRange { got: u32, cap: u32 },

    /// `step` was called on an environment whose episode already ended.
    #[error("episode already finished; call reset before stepping again")]
    EpisodeFinished,

    /// An action index or tensor shape did not match expectations.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A checkpoint file was malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A config file could not be parsed.
    #[error("config file {path}: {message}")]
    ConfigFile { path: String, message: String },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
