//! Simulation and statistics toolkit for a single-ensemble, dual-spatial-mode
//! atom-photon entanglement source with built-in quantum memory.
//!
//! * [`fock`]: density operators over truncated bosonic modes, channels, threshold detection.
//! * [`source`]: the write / store / retrieve / analyze chain and wavevector mode matching.
//! * [`measurement`]: g², visibility, correlation and CHSH estimators.
//! * [`montecarlo`]: counter-based, parallel-deterministic click sampling.
//! * [`experiments`]: calibration and the visibility, Bell and memory-decay sweeps.
//! * [`config`]: run configuration and anchor files used by the `apsim` binary.
//!
//! The operator algebra and estimators are generic over [`Real`]; the aliases
//! below fix the scalar to `f64`, which the sampler, sweeps and CLI use.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod measurement;
pub mod montecarlo;
pub mod scalar;
pub mod source;

pub use error::{Error, Result};
pub use scalar::Real;

pub type QuantumState = fock::QuantumState<f64>;
pub type QuantumState32 = fock::QuantumState<f32>;
pub type LocalOperator = fock::LocalOperator<f64>;
pub type ClickTable = fock::ClickTable<f64>;
pub type Estimate = measurement::Estimate<f64>;
/// Estimates in exact rational arithmetic, for checking quoted decimal figures.
pub type ExactEstimate = measurement::Estimate<num_rational::Rational64>;
pub type SourceParams = source::SourceParams<f64>;
pub type MemoryParams = source::MemoryParams<f64>;
pub type DetectorParams = source::DetectorParams<f64>;
pub type GeometryParams = source::GeometryParams<f64>;
pub type ChainParams = source::ChainParams<f64>;
