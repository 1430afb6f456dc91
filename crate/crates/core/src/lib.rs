//! Nested Monte Carlo laboratory for the fully lifted interpolation of
//! bilinearly indexed Gaussian processes.

#[cfg(feature = "cli")]
pub mod cli;
pub mod derivative;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod interpolator;
pub mod logspace;
pub mod measures;
pub mod perceptron;
pub mod schedule;

pub use error::{Error, Result, ScheduleError};
