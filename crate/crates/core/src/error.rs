//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by scenario construction, estimation, and bound evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// Angle outside [-90, 90] degrees or other angular precondition failure.
    #[error("invalid angle: {0}")]
    InvalidAngle(String),

    /// (theta, phi) pair for which cos^2(phi) - sin^2(theta) < 0; the
    /// direction vector is undefined under this parameterization.
    #[error("unrepresentable direction: azimuth {azimuth_deg} deg, elevation {elevation_deg} deg (cos^2 phi - sin^2 theta = {discriminant})")]
    DirectionDomain {
        azimuth_deg: f64,
        elevation_deg: f64,
        discriminant: f64,
    },

    /// Grid construction or lookup failure.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Mismatched matrix/vector dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Scenario-level validation failure (counts, distances, noise spec).
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// A unit-modulus vector failed its feasibility check.
    #[error("unit-modulus violation: entry {index} has magnitude {magnitude}")]
    UnitModulus { index: usize, magnitude: f64 },

    /// Objective matrix handed to the manifold optimizer is not Hermitian.
    #[error("objective matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),

    /// Fisher information matrix too ill-conditioned to invert.
    #[error("Fisher information matrix is singular or ill-conditioned (condition number {condition:.3e}, cap {cap:.3e})")]
    SingularFisher { condition: f64, cap: f64 },

    /// Requested SNR cannot be calibrated (zero signal power).
    #[error("cannot calibrate noise power: {0}")]
    NoiseCalibration(String),

    /// Estimator-level numerical failure, with the outer iteration attached
    /// when raised inside the alternating loop.
    #[error("estimation failed{}: {message}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Estimation {
        message: String,
        iteration: Option<usize>,
    },

    /// Configuration file parse or validation failure.
    #[error("config error: {0}")]
    Config(String),

    /// File I/O while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
