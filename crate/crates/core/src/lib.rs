//! Camera-based estimation of sympathetic arousal.
//!
//! The crate covers the whole pipeline: synthetic and recorded sessions
//! ([`dataset`]), video preprocessing ([`preprocess`]), EDA decomposition and
//! rank correlation ([`eda`]), the temporal-attention 3D CNN ([`model`]),
//! leave-one-subject-out training ([`training`]), per-participant evaluation
//! ([`evaluation`]) and downstream stress classification ([`stress`]).

pub mod cli;
pub mod dataset;
pub mod eda;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod preprocess;
pub mod signal;
pub mod stress;
pub mod training;

pub use error::{Error, Result};
