use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value violates a model invariant. `key` is the dotted config path.
    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    /// Two sites came closer than the configured minimum distance.
    #[error("geometry: sites {a} and {b} are {distance:.3e} apart (minimum {min:.3e}) at theta = {theta}")]
    Geometry {
        a: &'static str,
        b: &'static str,
        distance: f64,
        min: f64,
        theta: f64,
    },

    #[error("energy {energy} lies outside the open band (-{band}, {band})")]
    OutsideBand { energy: f64, band: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    /// Norm or energy drift beyond the allowed bound during propagation.
    #[error("numerical instability at t = {time}: {what} drifted by {drift:.3e}; try a smaller dt")]
    Instability { time: f64, what: &'static str, drift: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Thermal sum needs more vibrational states than were supplied.
    #[error("thermal truncation: residual Boltzmann weight {residual:.2e} with {supplied} states; need {needed}")]
    Truncation { residual: f64, supplied: usize, needed: usize },

    #[error("config parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        key: key.to_string(),
        reason: reason.into(),
    }
}
