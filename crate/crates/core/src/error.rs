use crate::measure::ColorPoint;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tenability violation: aggregated weight {weight:e} at {point} is negative")]
    TenabilityViolation { point: ColorPoint, weight: f64 },

    #[error("measure has no positive mass")]
    EmptyMeasure,

    #[error("point {point} does not belong to a {expected} color space")]
    SpaceMismatch { point: ColorPoint, expected: String },

    #[error("exact mean kernel unavailable for this replacement kernel")]
    MeanUnavailable,

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("sample path exceeded the hard cap of {cap} steps")]
    HorizonCapExceeded { cap: usize },

    #[error("power iteration did not converge after {iterations} iterations (last L1 change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },

    #[error("unknown reference distribution `{0}`")]
    UnknownReference(String),

    #[error("measure is not normalized (mass {mass})")]
    NotNormalized { mass: f64 },

    #[error("dimension {dim} unsupported for this operation")]
    DimensionUnsupported { dim: usize },

    #[error("trace is empty")]
    EmptyTrace,

    #[error("incremental m_nP drifted from P(m_n) by {discrepancy:e} at step {step}")]
    ParanoidMismatch { step: u64, discrepancy: f64 },

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("replica with seed {seed} failed: {source}")]
    ReplicaFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}
