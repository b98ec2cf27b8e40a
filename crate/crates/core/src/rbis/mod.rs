//! Receiver/receiver clock synchronization over the 5G NR SSB broadcast.
//!
//! Every UE timestamps each PBCH it receives. The master UE distributes its
//! `⟨SFN, t^R, N_TA^R⟩` observations as follow-up messages; each slave pairs
//! them with its own observation of the same broadcast and steps its clock by
//! the difference, minus a share of the timing-advance difference that
//! compensates unequal propagation delays.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::air::Sfn;
use crate::analysis::OffsetTrace;
use crate::clock::{true_offset, ClockState};
use crate::error::{AnalysisError, ValidationError};
use crate::sim::{SimTime, PS_PER_MS};

pub mod master;
pub mod network;
pub mod slave;

pub use master::MasterUe;
pub use network::{run_rbis, RbisConfig, RbisOutcome, Role, Sampling, SlaveReport, SyncLogRow, UeSetup};
pub use slave::{Correction, FollowUpOutcome, InitBranch, InitOutcome, MatchFailure, SlaveConfig, SlaveUe};

/// Half the SFN period: the largest initial offset SFN pairing can tolerate.
pub const SFN_AMBIGUITY_LIMIT_PS: i64 = 5_120 * PS_PER_MS as i64;

/// Sent once by the master at startup so slaves can coarsely align.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitMsg {
    pub t0_ref: i64,
}

/// The master's observation of one PBCH, forwarded to every slave.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FollowUpMsg {
    pub sfn_ref: Sfn,
    pub half_frame: bool,
    pub t_ref: i64,
    pub n_ta_ref: i64,
    /// Ground-truth broadcast id for harness checks; never used for matching.
    pub broadcast: u64,
}

/// A UE's local timestamp for one received PBCH.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationPair {
    pub sfn: Sfn,
    pub half_frame: bool,
    pub t_local: i64,
    /// Ground-truth broadcast id for harness checks; never used for matching.
    pub broadcast: u64,
}

/// How much of the timing-advance difference `T_TA^R − T_TA^S` is removed from each correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum CorrectionMode {
    /// Raw timestamp difference only.
    None,
    /// The full TA difference.
    #[default]
    PaperFull,
    /// Half the TA difference, i.e. the one-way propagation difference.
    Half,
}

impl CorrectionMode {
    pub const ALL: [CorrectionMode; 3] = [CorrectionMode::None, CorrectionMode::PaperFull, CorrectionMode::Half];

    pub fn factor(self) -> Ratio<i128> {
        match self {
            CorrectionMode::None => Ratio::from_integer(0),
            CorrectionMode::PaperFull => Ratio::from_integer(1),
            CorrectionMode::Half => Ratio::new(1, 2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CorrectionMode::None => "none",
            CorrectionMode::PaperFull => "paper_full",
            CorrectionMode::Half => "half",
        }
    }
}

impl fmt::Display for CorrectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorrectionMode {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(CorrectionMode::None),
            "paper_full" => Ok(CorrectionMode::PaperFull),
            "half" => Ok(CorrectionMode::Half),
            other => Err(ValidationError::Invalid(format!(
                "unknown correction mode '{other}' (expected none, paper_full or half)"
            ))),
        }
    }
}

/// Append the ground-truth master/slave offset at `true_time` to `trace`.
pub fn record_offset_sample(
    trace: &mut OffsetTrace,
    master: &ClockState,
    slave: &ClockState,
    true_time: SimTime,
) -> Result<(), AnalysisError> {
    trace.record(true_time, true_offset(master, slave, true_time))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parsing() {
        for m in CorrectionMode::ALL {
            assert_eq!(m.as_str().parse::<CorrectionMode>().unwrap(), m);
        }
        assert!("full".parse::<CorrectionMode>().is_err());
        assert_eq!(CorrectionMode::default(), CorrectionMode::PaperFull);
    }

    #[test]
    fn offset_sampling() {
        let mut trace = OffsetTrace::default();
        let m = ClockState::ideal();
        let mut s = ClockState::new(0.0, -2_000_000).unwrap();
        record_offset_sample(&mut trace, &m, &m, SimTime::from_ms(1)).unwrap();
        record_offset_sample(&mut trace, &m, &s, SimTime::from_ms(2)).unwrap();
        s.step(2_000_000, SimTime::from_ms(3));
        record_offset_sample(&mut trace, &m, &s, SimTime::from_ms(3)).unwrap();
        assert_eq!(trace.offsets().collect::<Vec<_>>(), vec![0, 2_000_000, 0]);
    }
}
