//! Toolkit for 2:1 varactor parametric frequency dividers.
//!
//! Closed-form thresholds and component synthesis, a two-tone harmonic
//! balance with stability classification, and a time-domain integrator
//! used as an independent check on the threshold.

pub mod circuit_model;
pub mod cli;
pub mod error;
pub mod harmonic_balance;
pub mod impedance;
pub mod synthesis;
pub mod threshold;
pub mod timedomain;

pub use error::{PfdError, Result};
