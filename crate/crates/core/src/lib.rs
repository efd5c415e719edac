//! Testing whether two views of the same observations carry dependent
//! cluster structure.
//!
//! Each view is clustered on its own with a Gaussian mixture. The two fitted
//! mixtures are then linked through a coupling matrix whose estimate gives a
//! pseudo likelihood ratio statistic for independence, calibrated by
//! permuting one view against the other.

pub mod coupling;
pub mod error;
pub mod inference;
pub mod mixture;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
