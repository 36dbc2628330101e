use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Fock dimension {dim}: need at least {min}")]
    InvalidDimension { dim: usize, min: usize },

    #[error("Fock truncation {dim} too small for |alpha| = {alpha:.4}; use at least {suggested}")]
    Truncation { alpha: f64, dim: usize, suggested: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parameters outside the double-well regime: {0}")]
    Regime(String),

    #[error("propagation failed: {0}")]
    Propagation(String),

    #[error("propagator unitarity defect {defect:.3e} exceeds {limit:.1e}")]
    Quality { defect: f64, limit: f64 },

    #[error("drive calibration failed: {0}")]
    Calibration(String),

    #[error("effective indices 0 and 1 are not both matched to Floquet modes")]
    ClassificationRequired,

    #[error("Husimi window too small: boundary mass {boundary_mass:.3e}; suggested half-width {suggested:.3}")]
    Window { boundary_mass: f64, suggested: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
