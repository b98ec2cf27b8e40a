//! Master UE: announces its startup time, then forwards one follow-up per PBCH.

use crate::air::{PbchBroadcast, TimingAdvanceState};

use super::{FollowUpMsg, InitMsg};

#[derive(Debug, Clone, Default)]
pub struct MasterUe {
    ta: TimingAdvanceState,
    started: bool,
    follow_ups: u64,
}

impl MasterUe {
    pub fn new(ta: TimingAdvanceState) -> Self {
        MasterUe {
            ta,
            started: false,
            follow_ups: 0,
        }
    }

    pub fn ta(&self) -> TimingAdvanceState {
        self.ta
    }

    pub fn set_n_ta(&mut self, n_ta: i64) {
        self.ta.n_ta = n_ta;
    }

    pub fn follow_ups_sent(&self) -> u64 {
        self.follow_ups
    }

    /// `t_local` is the master's clock reading at startup.
    pub fn on_startup(&mut self, t_local: i64) -> InitMsg {
        self.started = true;
        InitMsg { t0_ref: t_local }
    }

    /// Package the reception timestamp of `pbch` with its SFN and the current `N_TA`.
    pub fn on_pbch(&mut self, pbch: &PbchBroadcast, t_local: i64) -> FollowUpMsg {
        self.follow_ups += 1;
        FollowUpMsg {
            sfn_ref: pbch.sfn,
            half_frame: pbch.half_frame,
            t_ref: t_local,
            n_ta_ref: self.ta.n_ta,
            broadcast: pbch.index,
        }
    }
}
