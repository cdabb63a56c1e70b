//! Error type shared by all library modules.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building models, solving matrix
/// equations, assembling the limit, or simulating.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive stable: min Re(eigenvalue) = {min_real_part:e} <= {tolerance:e}")]
    NotPositiveStable { min_real_part: f64, tolerance: f64 },

    #[error("vectorized Lyapunov system is singular")]
    SingularSystem,

    #[error("matrix exponential overflow: ||m*t|| = {norm:e} too large")]
    Overflow { norm: f64 },

    #[error("effective constant {which} is numerically singular (condition {condition:e})")]
    SingularEffectiveConstant { which: &'static str, condition: f64 },

    #[error("rate matrix must be diagonal with positive entries ({0})")]
    NonPositiveRate(String),

    #[error("harmonic frequency |omega| = 2 is critically damped; the oscillatory kernel formula degenerates")]
    CriticalDamping,

    #[error("harmonic frequency must be nonzero")]
    ZeroFrequency,

    #[error("theta(x) = g K1 h is singular at state {state} (condition {condition:e})")]
    SingularTheta { state: String, condition: f64 },

    #[error("jacobian of {0} unavailable and finite-difference fallback disabled")]
    JacobianUnavailable(&'static str),

    #[error("damping coefficient g vanishes at x = {0}")]
    ZeroDamping(f64),

    #[error("denominator R(x) vanishes at x = {0}")]
    DegenerateR(f64),

    #[error("closed-form drift denominator vanishes at x = {0}")]
    DegenerateDenominator(f64),

    #[error("operation requires {expected} noise but model uses {actual} noise")]
    WrongNoiseKind {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("quadrature failed to converge: {0}")]
    QuadratureFailure(String),

    #[error("integration diverged at t = {time}: |state| = {magnitude:e}")]
    UnstableStep { time: f64, magnitude: f64 },

    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("bath needs at least {minimum} oscillator modes, got {got}")]
    InsufficientModes { minimum: usize, got: usize },

    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
