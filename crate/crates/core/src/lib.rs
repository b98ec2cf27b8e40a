//! Discrete-event simulation of receiver/receiver clock synchronization over
//! the 5G NR SSB broadcast, with a two-way time transfer baseline and the
//! statistics used to evaluate both.

pub mod air;
pub mod analysis;
pub mod clock;
pub mod error;
pub mod ptp;
pub mod rbis;
pub mod sim;

pub use error::{AnalysisError, RunError, SimError, ValidationError};
pub use sim::SimTime;
