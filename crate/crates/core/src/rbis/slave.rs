//! Slave UE: coarse alignment on the master's startup time, then per-broadcast
//! offset correction from matched follow-ups.
//!
//! Observations are kept in a bounded FIFO. A follow-up is matched to the
//! observation of the same broadcast by its SFN (and half-frame bit), walking
//! the history backwards from the newest entry. The lag found by the last
//! successful match is tried first, so steady-state matching is O(1).
//!
//! Stored timestamps are expressed in the clock timeline at the time they
//! were taken; corrections applied after that are added back when the pair is
//! used, so a late follow-up never double-counts a step.

use std::collections::VecDeque;

use thiserror::Error;

use crate::air::{round_ps, tc_units_to_ps, PbchBroadcast, Sfn, TimingAdvanceState, SFN_MODULUS};

use super::{CorrectionMode, FollowUpMsg, InitMsg, ObservationPair, SFN_AMBIGUITY_LIMIT_PS};

pub const DEFAULT_HISTORY_CAPACITY: usize = 2048;
const MAX_PENDING: usize = 64;
const HALF_FRAMES: i32 = 2 * SFN_MODULUS as i32;
/// SFN period in milliseconds.
const SFN_PERIOD_MS: u32 = 10 * SFN_MODULUS as u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlaveConfig {
    pub mode: CorrectionMode,
    /// Step to the master's startup time even when within the SFN ambiguity limit.
    pub literal_init: bool,
    pub ssb_period_ms: u32,
    pub history_capacity: usize,
}

impl Default for SlaveConfig {
    fn default() -> Self {
        SlaveConfig {
            mode: CorrectionMode::default(),
            literal_init: false,
            ssb_period_ms: 20,
            history_capacity: DEFAULT_HISTORY_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitBranch {
    WithinLimit,
    CoarseStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitOutcome {
    pub branch: InitBranch,
    /// `t_0^R − t_0^S`.
    pub diff_ps: i64,
    /// Clock step the caller must apply, if any.
    pub step_ps: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no observation of SFN {sfn} within one SFN period")]
pub struct MatchFailure {
    pub sfn: Sfn,
}

/// One computed clock correction. The caller must step the clock by `delta_ps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Correction {
    pub pair: ObservationPair,
    pub follow_up: FollowUpMsg,
    pub lag_ticks: u16,
    /// `t^R − t^S`.
    pub raw_ps: i64,
    /// `T_TA^R − T_TA^S`, rounded to the picosecond.
    pub runtime_term_ps: i64,
    pub delta_ps: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FollowUpOutcome {
    Applied(Correction),
    /// The matching broadcast has not been observed yet; retried on the next PBCH.
    Deferred,
    Failed(MatchFailure),
    /// Received before the init message.
    Ignored,
}

#[derive(Debug, Clone, Copy)]
struct StoredPair {
    pair: ObservationPair,
    steps_at_record: i64,
}

#[derive(Debug, Clone)]
pub struct SlaveUe {
    cfg: SlaveConfig,
    init: Option<InitOutcome>,
    history: VecDeque<StoredPair>,
    pending: VecDeque<FollowUpMsg>,
    lag_entries: usize,
    lag_ticks: u16,
    applied_steps: i64,
    match_failures: u64,
    last_correction: Option<i64>,
}

fn half_frame_index(sfn: Sfn, half_frame: bool) -> i32 {
    sfn.value() as i32 * 2 + half_frame as i32
}

impl SlaveUe {
    pub fn new(cfg: SlaveConfig) -> Self {
        SlaveUe {
            cfg,
            init: None,
            history: VecDeque::with_capacity(cfg.history_capacity.min(4096)),
            pending: VecDeque::new(),
            lag_entries: 0,
            lag_ticks: 0,
            applied_steps: 0,
            match_failures: 0,
            last_correction: None,
        }
    }

    pub fn config(&self) -> &SlaveConfig {
        &self.cfg
    }

    pub fn init_outcome(&self) -> Option<InitOutcome> {
        self.init
    }

    /// SFN lag between the newest local observation and the last matched follow-up.
    pub fn lag_ticks(&self) -> u16 {
        self.lag_ticks
    }

    pub fn match_failures(&self) -> u64 {
        self.match_failures
    }

    pub fn last_correction(&self) -> Option<i64> {
        self.last_correction
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Broadcasts within one SFN period; no older entry can be told apart by SFN.
    fn search_depth(&self) -> usize {
        (SFN_PERIOD_MS as usize).div_ceil(self.cfg.ssb_period_ms.max(1) as usize)
    }

    /// Handle the master's startup timestamp. Only the first call has an effect.
    pub fn on_init(&mut self, msg: InitMsg, t0_local: i64) -> Option<InitOutcome> {
        if self.init.is_some() {
            return None;
        }
        let diff = msg.t0_ref - t0_local;
        let within = diff.abs() <= SFN_AMBIGUITY_LIMIT_PS;
        let outcome = InitOutcome {
            branch: if within {
                InitBranch::WithinLimit
            } else {
                InitBranch::CoarseStep
            },
            diff_ps: diff,
            step_ps: (!within || self.cfg.literal_init).then_some(diff),
        };
        if let Some(step) = outcome.step_ps {
            self.applied_steps += step;
        }
        self.init = Some(outcome);
        Some(outcome)
    }

    /// Record the local observation of `pbch` and retry deferred follow-ups.
    /// Observations made before init are kept; the init step is rebased into them.
    pub fn on_pbch(&mut self, pbch: &PbchBroadcast, t_local: i64, ta: &TimingAdvanceState) -> Vec<Correction> {
        if self.history.len() == self.cfg.history_capacity {
            self.history.pop_front();
        }
        self.history.push_back(StoredPair {
            pair: ObservationPair {
                sfn: pbch.sfn,
                half_frame: pbch.half_frame,
                t_local,
                broadcast: pbch.index,
            },
            steps_at_record: self.applied_steps,
        });

        let mut applied = Vec::new();
        for fu in std::mem::take(&mut self.pending) {
            match self.on_follow_up(fu, ta) {
                FollowUpOutcome::Applied(c) => applied.push(c),
                FollowUpOutcome::Deferred | FollowUpOutcome::Failed(_) | FollowUpOutcome::Ignored => {}
            }
        }
        applied
    }

    /// Match a follow-up and compute the correction. On `Applied` the caller
    /// must step the clock by the returned delta.
    pub fn on_follow_up(&mut self, fu: FollowUpMsg, ta: &TimingAdvanceState) -> FollowUpOutcome {
        if self.init.is_none() {
            return FollowUpOutcome::Ignored;
        }
        match self.match_sfn(&fu) {
            Ok((pair, lag)) => {
                let c = self.compute_correction(pair, fu, lag, ta);
                self.applied_steps += c.delta_ps;
                self.last_correction = Some(c.delta_ps);
                FollowUpOutcome::Applied(c)
            }
            Err(failure) => {
                if self.is_ahead(&fu) && self.pending.len() < MAX_PENDING {
                    self.pending.push_back(fu);
                    FollowUpOutcome::Deferred
                } else {
                    self.match_failures += 1;
                    FollowUpOutcome::Failed(failure)
                }
            }
        }
    }

    /// Whether `fu` refers to a broadcast newer than anything observed so far.
    fn is_ahead(&self, fu: &FollowUpMsg) -> bool {
        let Some(newest) = self.history.back() else {
            return true;
        };
        let d = (half_frame_index(fu.sfn_ref, fu.half_frame)
            - half_frame_index(newest.pair.sfn, newest.pair.half_frame))
        .rem_euclid(HALF_FRAMES);
        d > 0 && d < HALF_FRAMES / 2
    }

    fn effective(&self, stored: &StoredPair) -> ObservationPair {
        ObservationPair {
            t_local: stored.pair.t_local + (self.applied_steps - stored.steps_at_record),
            ..stored.pair
        }
    }

    /// Find the local observation of the broadcast `fu` refers to. Returns the
    /// pair (timestamp rebased onto the current clock) and the SFN lag.
    pub fn match_sfn(&mut self, fu: &FollowUpMsg) -> Result<(ObservationPair, u16), MatchFailure> {
        let failure = MatchFailure { sfn: fu.sfn_ref };
        let len = self.history.len();
        let newest_sfn = self.history.back().ok_or(failure)?.pair.sfn;
        let matches = |p: &StoredPair| p.pair.sfn == fu.sfn_ref && p.pair.half_frame == fu.half_frame;
        let depth = self.search_depth().min(len);

        let found = if self.lag_entries < depth && matches(&self.history[len - 1 - self.lag_entries]) {
            Some(self.lag_entries)
        } else {
            (0..depth).find(|back| matches(&self.history[len - 1 - back]))
        };
        let back = found.ok_or(failure)?;
        self.lag_entries = back;
        self.lag_ticks = newest_sfn.ticks_since(fu.sfn_ref);
        Ok((self.effective(&self.history[len - 1 - back]), self.lag_ticks))
    }

    /// `delta = (t^R − t^S) − k·(T_TA^R − T_TA^S)` with `k` set by the correction mode.
    /// The TA difference is formed in exact Tc units, so the common `N_TA,off`
    /// cancels before any rounding.
    pub fn compute_correction(
        &self,
        pair: ObservationPair,
        fu: FollowUpMsg,
        lag_ticks: u16,
        ta: &TimingAdvanceState,
    ) -> Correction {
        let raw = fu.t_ref - pair.t_local;
        let ta_diff_tc = (fu.n_ta_ref + ta.n_ta_off) - (ta.n_ta + ta.n_ta_off);
        let runtime = tc_units_to_ps(ta_diff_tc as i128);
        let delta = round_ps(num_rational::Ratio::from_integer(raw as i128) - runtime * self.cfg.mode.factor());
        Correction {
            pair,
            follow_up: fu,
            lag_ticks,
            raw_ps: raw,
            runtime_term_ps: round_ps(runtime),
            delta_ps: delta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::air::{half_frame_at, Numerology};
    use crate::sim::{SimTime, PS_PER_MS, PS_PER_S};

    const MS: i64 = PS_PER_MS as i64;

    fn pbch_at(ms: u64) -> PbchBroadcast {
        let t = SimTime::from_ms(ms);
        PbchBroadcast {
            sfn: Sfn::at(t),
            half_frame: half_frame_at(t),
            numerology: Numerology::new(1).unwrap(),
            emitted_at: t,
            index: ms / 20,
        }
    }

    fn follow_up(pbch: &PbchBroadcast, t_ref: i64, n_ta_ref: i64) -> FollowUpMsg {
        FollowUpMsg {
            sfn_ref: pbch.sfn,
            half_frame: pbch.half_frame,
            t_ref,
            n_ta_ref,
            broadcast: pbch.index,
        }
    }

    fn ready(mode: CorrectionMode) -> SlaveUe {
        let mut s = SlaveUe::new(SlaveConfig {
            mode,
            ..SlaveConfig::default()
        });
        s.on_init(InitMsg { t0_ref: 0 }, 0);
        s
    }

    #[test]
    fn init_branches() {
        let mut s = SlaveUe::new(SlaveConfig::default());
        let o = s.on_init(InitMsg { t0_ref: 0 }, 0).unwrap();
        assert_eq!((o.branch, o.step_ps), (InitBranch::WithinLimit, None));
        assert!(s.on_init(InitMsg { t0_ref: 0 }, 9).is_none());

        let mut s = SlaveUe::new(SlaveConfig::default());
        let o = s
            .on_init(
                InitMsg {
                    t0_ref: 6 * PS_PER_S as i64,
                },
                0,
            )
            .unwrap();
        assert_eq!(o.branch, InitBranch::CoarseStep);
        assert_eq!(o.step_ps, Some(6 * PS_PER_S as i64));

        let mut s = SlaveUe::new(SlaveConfig::default());
        let o = s
            .on_init(
                InitMsg {
                    t0_ref: SFN_AMBIGUITY_LIMIT_PS,
                },
                0,
            )
            .unwrap();
        assert_eq!((o.branch, o.step_ps), (InitBranch::WithinLimit, None));
        let mut s = SlaveUe::new(SlaveConfig::default());
        let o = s.on_init(InitMsg { t0_ref: 0 }, SFN_AMBIGUITY_LIMIT_PS + 1).unwrap();
        assert_eq!(o.branch, InitBranch::CoarseStep);

        let mut s = SlaveUe::new(SlaveConfig {
            literal_init: true,
            ..SlaveConfig::default()
        });
        let o = s.on_init(InitMsg { t0_ref: 3 * MS }, 0).unwrap();
        assert_eq!((o.branch, o.step_ps), (InitBranch::WithinLimit, Some(3 * MS)));
    }

    #[test]
    fn no_correction_before_init() {
        let mut s = SlaveUe::new(SlaveConfig::default());
        let p = pbch_at(0);
        assert!(s.on_pbch(&p, 0, &TimingAdvanceState::default()).is_empty());
        assert_eq!(s.history_len(), 1);
        assert_eq!(
            s.on_follow_up(follow_up(&p, 0, 0), &TimingAdvanceState::default()),
            FollowUpOutcome::Ignored
        );
    }

    #[test]
    fn immediate_match_has_zero_lag() {
        let mut s = ready(CorrectionMode::None);
        let p = pbch_at(70);
        s.on_pbch(&p, 70 * MS, &TimingAdvanceState::default());
        let (pair, lag) = s.match_sfn(&follow_up(&p, 0, 0)).unwrap();
        assert_eq!(pair.sfn.value(), 7);
        assert_eq!(lag, 0);
    }

    #[test]
    fn late_follow_up_matches_older_pair() {
        let mut s = ready(CorrectionMode::None);
        let ta = TimingAdvanceState::default();
        for ms in [60, 80, 100, 120] {
            s.on_pbch(&pbch_at(ms), ms as i64 * MS, &ta);
        }
        // follow-up for SFN 10 arrives one broadcast interval late
        let (pair, lag) = s.match_sfn(&follow_up(&pbch_at(100), 0, 0)).unwrap();
        assert_eq!(pair.sfn.value(), 10);
        assert_eq!(pair.broadcast, 5);
        assert_eq!(lag, 2);
        // same lag is reused on the next round
        s.on_pbch(&pbch_at(140), 140 * MS, &ta);
        let (pair, lag) = s.match_sfn(&follow_up(&pbch_at(120), 0, 0)).unwrap();
        assert_eq!((pair.sfn.value(), lag), (12, 2));
    }

    #[test]
    fn match_across_sfn_wrap() {
        let mut s = ready(CorrectionMode::None);
        let ta = TimingAdvanceState::default();
        // SFN 1020, 1022, 0 around the 10.24 s boundary
        for ms in [10_200, 10_220, 10_240] {
            s.on_pbch(&pbch_at(ms), ms as i64 * MS, &ta);
        }
        let (pair, lag) = s.match_sfn(&follow_up(&pbch_at(10_220), 0, 0)).unwrap();
        assert_eq!(pair.sfn.value(), 1022);
        assert_eq!(lag, 2);
        let (pair, lag) = s.match_sfn(&follow_up(&pbch_at(10_200), 0, 0)).unwrap();
        assert_eq!((pair.sfn.value(), lag), (1020, 4));
    }

    #[test]
    fn unmatched_follow_up_counts_failure() {
        let mut s = ready(CorrectionMode::None);
        let ta = TimingAdvanceState::default();
        for ms in (0..40).map(|k| 1_000 + k * 20) {
            s.on_pbch(&pbch_at(ms), 0, &ta);
        }
        // broadcast from before the history began
        let out = s.on_follow_up(follow_up(&pbch_at(500), 0, 0), &ta);
        assert!(matches!(out, FollowUpOutcome::Failed(_)));
        assert_eq!(s.match_failures(), 1);
    }

    #[test]
    fn one_sfn_period_old_entry_is_not_matched() {
        let mut s = ready(CorrectionMode::None);
        let ta = TimingAdvanceState::default();
        for k in 0..=512u64 {
            s.on_pbch(&pbch_at(k * 20), 0, &ta);
        }
        // SFN 0 at t = 0 and t = 10.24 s; only the newer one is within reach
        let (pair, _) = s.match_sfn(&follow_up(&pbch_at(10_240), 0, 0)).unwrap();
        assert_eq!(pair.broadcast, 512);
    }

    #[test]
    fn early_follow_up_is_deferred_then_applied() {
        let mut s = ready(CorrectionMode::None);
        let ta = TimingAdvanceState::default();
        s.on_pbch(&pbch_at(20), 20 * MS, &ta);
        let fu = follow_up(&pbch_at(40), 40 * MS + 5, 0);
        assert_eq!(s.on_follow_up(fu, &ta), FollowUpOutcome::Deferred);
        let applied = s.on_pbch(&pbch_at(40), 40 * MS, &ta);
        assert_eq!(applied.len(), 1);
        assert_eq!(applied[0].delta_ps, 5);
        assert_eq!(s.match_failures(), 0);
    }

    #[test]
    fn later_steps_rebase_stored_pairs() {
        let mut s = ready(CorrectionMode::None);
        let ta = TimingAdvanceState::default();
        // slave is 1 µs behind; both observations taken before any correction
        s.on_pbch(&pbch_at(20), 20 * MS - 1_000_000, &ta);
        s.on_pbch(&pbch_at(40), 40 * MS - 1_000_000, &ta);
        let FollowUpOutcome::Applied(c1) = s.on_follow_up(follow_up(&pbch_at(20), 20 * MS, 0), &ta) else {
            panic!()
        };
        assert_eq!(c1.delta_ps, 1_000_000);
        let FollowUpOutcome::Applied(c2) = s.on_follow_up(follow_up(&pbch_at(40), 40 * MS, 0), &ta) else {
            panic!()
        };
        assert_eq!(c2.delta_ps, 0);
        assert_eq!(s.last_correction(), Some(0));
    }

    #[test]
    fn correction_modes() {
        let p = pbch_at(20);
        let slave_ta = TimingAdvanceState {
            n_ta: 512,
            n_ta_off: 25_600,
        };
        let pair = ObservationPair {
            sfn: p.sfn,
            half_frame: p.half_frame,
            t_local: 1_000,
            broadcast: p.index,
        };
        // master two µ=1 steps further out
        let fu = follow_up(&p, 501_000, 1536);
        let diff = tc_units_to_ps(1024);
        let out: Vec<Correction> = CorrectionMode::ALL
            .iter()
            .map(|m| ready(*m).compute_correction(pair, fu, 0, &slave_ta))
            .collect();
        assert_eq!(out[0].delta_ps, 500_000);
        assert_eq!(
            out[1].delta_ps,
            round_ps(num_rational::Ratio::from_integer(500_000) - diff)
        );
        assert_eq!(
            out[2].delta_ps,
            round_ps(num_rational::Ratio::from_integer(500_000) - diff / 2)
        );
        assert_eq!(out[1].runtime_term_ps, round_ps(diff));
        let half_gap = (out[2].delta_ps - out[1].delta_ps) as f64;
        assert!((half_gap - out[1].runtime_term_ps as f64 / 2.0).abs() <= 1.0);
    }

    #[test]
    fn t_off_cancels_bit_exactly() {
        let p = pbch_at(20);
        let pair = ObservationPair {
            sfn: p.sfn,
            half_frame: p.half_frame,
            t_local: 123_457,
            broadcast: p.index,
        };
        let fu = follow_up(&p, 987_653, 7_936);
        for mode in CorrectionMode::ALL {
            let s = ready(mode);
            let deltas: Vec<i64> = [0i64, 25_559, 39_936, 13_792]
                .iter()
                .map(|off| {
                    s.compute_correction(
                        pair,
                        fu,
                        0,
                        &TimingAdvanceState {
                            n_ta: 3_584,
                            n_ta_off: *off,
                        },
                    )
                    .delta_ps
                })
                .collect();
            assert!(deltas.windows(2).all(|w| w[0] == w[1]), "{mode}: {deltas:?}");
        }
    }

    #[test]
    fn history_is_bounded() {
        let mut s = SlaveUe::new(SlaveConfig {
            history_capacity: 16,
            ..SlaveConfig::default()
        });
        s.on_init(InitMsg { t0_ref: 0 }, 0);
        for k in 0..100 {
            s.on_pbch(&pbch_at(k * 20), 0, &TimingAdvanceState::default());
        }
        assert_eq!(s.history_len(), 16);
    }
}
