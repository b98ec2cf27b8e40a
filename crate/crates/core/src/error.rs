use thiserror::Error;

use crate::sim::SimTime;

/// Simulation invariant violations. These indicate a bug in the caller and abort the run.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event scheduled at {fire_at} but simulation time is already {now}")]
    ScheduleInPast { fire_at: SimTime, now: SimTime },
    #[error("broadcast at {at} is not aligned to the {period_ps} ps SSB grid")]
    MisalignedBroadcast { at: SimTime, period_ps: u64 },
}

/// A parameter or protocol field outside its permitted range.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("{what} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{0}")]
    Invalid(String),
}

impl ValidationError {
    pub(crate) fn check_range(what: &'static str, value: f64, min: f64, max: f64) -> Result<(), Self> {
        if value.is_finite() && value >= min && value <= max {
            Ok(())
        } else {
            Err(ValidationError::OutOfRange { what, value, min, max })
        }
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("outlier bound must be positive, got {0} ps")]
    NonPositiveBound(i64),
    #[error("bin width must be positive, got {0} ps")]
    NonPositiveBinWidth(i64),
    #[error("sample time {time} ps does not increase past {previous} ps")]
    NonIncreasingTime { time: u64, previous: u64 },
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from a whole simulation run.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}
