use thiserror::Error;

/// Errors raised while validating a lifting schedule.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("r must be at least 1")]
    ZeroLevels,
    #[error("{name} has length {found}, expected r + 2 = {expected}")]
    Length {
        name: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("{name} contains a non-finite entry at index {index}")]
    NonFinite { name: &'static str, index: usize },
    #[error("mSchedule must start at 1, found {0}")]
    MFirst(f64),
    #[error("mSchedule must end at 0, found {0}")]
    MLast(f64),
    #[error("mSchedule entry {value} at index {index} is outside (0, 1]")]
    MRange { index: usize, value: f64 },
    #[error("{name} not nonincreasing at index {index}")]
    NotNonincreasing { name: &'static str, index: usize },
    #[error("{name} must start at a value <= 1, found {value}")]
    AboveOne { name: &'static str, value: f64 },
    #[error("{name} must end at 0, found {value}")]
    NonzeroTail { name: &'static str, value: f64 },
    #[error("beta must be finite and nonnegative, found {0}")]
    Beta(f64),
    #[error("s must be finite and nonzero, found {0}")]
    ZeroS(f64),
    #[error("group exponent must be finite and positive, found {0}")]
    GroupExponent(f64),
    #[error("invalid level index {0}: levels start at 1")]
    LevelIndex(usize),
}

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index tuple has {found} per-level indices, nesting depth requires {required}")]
    NestingDepth { found: usize, required: usize },
    #[error("empty inner set: anchor {0} admits no configuration")]
    EmptyInnerSet(usize),
    #[error("interpolation parameter t = {0} outside the admissible range")]
    TOutOfRange(f64),
    #[error("finite-difference step must be positive, found {0}")]
    Step(f64),
    #[error("Monte Carlo plan is invalid: {0}")]
    Plan(String),
    #[error("gamma family {family} is not defined for r = {r}")]
    Family { family: String, r: usize },
    #[error("configuration vectors must have unit norm (index {0})")]
    NonUnitNorm(usize),
    #[error("{0}")]
    Enumeration(String),
    #[error("overlap restriction is empty")]
    EmptyRestriction,
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
