//! Measure-valued Pólya processes: simulation, reference limits and
//! convergence diagnostics.
//!
//! The composition measure `m_n` grows by a random, possibly signed,
//! replacement measure at every step; colors are drawn proportionally to the
//! weighted composition `m_n P`. Normalized compositions converge to
//! quasi-stationary-type limits that [`qsd`] computes independently and
//! [`diagnostics`] compares against.

pub mod diagnostics;
pub mod engine;
pub mod error;
mod fenwick;
pub mod format;
pub mod kernels;
pub mod measure;
pub mod models;
pub mod qsd;
pub mod rng;

pub use engine::{MvppState, StepRecord};
pub use error::{Error, Result};
pub use kernels::{ComposedKernel, LyapunovSpec, ReplacementKernel, WeightKernel};
pub use measure::{ColorPoint, SignedDelta, Space, WeightedMeasure};
pub use rng::RngStream;
