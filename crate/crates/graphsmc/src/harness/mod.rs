//! Experiment harness: synthetic regime-switching data, stratified
//! cross-validation with early stopping, classification metrics, and the
//! linear-Gaussian oracle that validates the filter machinery.

pub mod kalman;
pub mod metrics;
pub mod synthetic;
pub mod train;
