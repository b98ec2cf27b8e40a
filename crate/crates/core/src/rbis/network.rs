//! Event-driven RBIS scenario: one gNB, one master UE and any number of slaves.
//!
//! The gNB broadcasts an SSB every period; each UE timestamps its arrival.
//! Init and follow-up messages travel over a reliable, in-order side channel
//! with uniformly distributed delay. Timing advance is set at attach from an
//! idealized RAR measurement and refreshed by periodic MAC CE updates.

use crate::air::{
    broadcast_pbch, gnb_measure_tac, propagation_delay, ta_from_rar, ta_update_macce, DistanceProfile, GnbConfig,
    PbchBroadcast, Receiver, Sfn, TacMode, TimingAdvanceState,
};
use crate::analysis::{OffsetTrace, TraceMeta};
use crate::clock::{true_offset, ClockState, TimestampModel};
use crate::error::{RunError, ValidationError};
use crate::sim::{EventPayload, NodeId, RngStream, Scheduler, SimTime, PS_PER_US};

use super::{
    record_offset_sample, Correction, CorrectionMode, FollowUpMsg, FollowUpOutcome, InitBranch, InitMsg, MasterUe,
    SlaveConfig, SlaveUe,
};

const GNB: NodeId = NodeId(0);

const STREAM_TIMESTAMP: u64 = 0x100;
const STREAM_TOA: u64 = 0x200;
const STREAM_CHANNEL: u64 = 0x300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Master,
    Slave,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeSetup {
    pub name: String,
    pub role: Role,
    pub distance: DistanceProfile,
    pub clock: ClockState,
    pub timestamp: TimestampModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// One offset sample right after each applied correction.
    PerRound,
    /// Fixed-interval samples, starting once a slave has applied its first correction.
    Periodic { interval_ps: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbisConfig {
    pub scenario: String,
    pub seed: u64,
    pub duration: SimTime,
    pub gnb: GnbConfig,
    pub ues: Vec<UeSetup>,
    pub mode: CorrectionMode,
    pub literal_init: bool,
    /// Inclusive side-channel delay range in picoseconds.
    pub follow_up_delay_ps: (u64, u64),
    pub sampling: Sampling,
    pub event_log: bool,
}

impl RbisConfig {
    pub const DEFAULT_FOLLOW_UP_DELAY_PS: (u64, u64) = (1_000 * PS_PER_US, 5_000 * PS_PER_US);

    pub fn validate(&self) -> Result<(), ValidationError> {
        self.gnb.validate()?;
        let masters = self.ues.iter().filter(|u| u.role == Role::Master).count();
        if masters != 1 {
            return Err(ValidationError::Invalid(format!(
                "exactly one master UE is required, found {masters}"
            )));
        }
        if self.ues.len() < 2 {
            return Err(ValidationError::Invalid("at least one slave UE is required".into()));
        }
        if self.duration == SimTime::ZERO {
            return Err(ValidationError::Invalid("duration must be positive".into()));
        }
        let (lo, hi) = self.follow_up_delay_ps;
        if lo > hi {
            return Err(ValidationError::Invalid(format!(
                "follow-up delay range is empty: {lo} > {hi}"
            )));
        }
        if let Sampling::Periodic { interval_ps: 0 } = self.sampling {
            return Err(ValidationError::Invalid("sampling interval must be positive".into()));
        }
        for ue in &self.ues {
            ue.timestamp.validate()?;
        }
        Ok(())
    }
}

/// One line of the per-slave sync log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncLogRow {
    pub round: u64,
    pub true_time: SimTime,
    pub sfn: Sfn,
    pub raw_delta_ps: i64,
    pub runtime_term_ps: i64,
    pub applied_delta_ps: i64,
    pub true_offset_after_ps: i64,
    pub match_failures: u64,
}

impl SyncLogRow {
    pub const CSV_HEADER: &'static str =
        "round,true_time_ps,sfn,raw_delta_ps,runtime_term_ps,applied_delta_ps,true_offset_after_ps,match_failures";

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.round,
            self.true_time.as_ps(),
            self.sfn,
            self.raw_delta_ps,
            self.runtime_term_ps,
            self.applied_delta_ps,
            self.true_offset_after_ps,
            self.match_failures
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlaveReport {
    pub name: String,
    pub trace: OffsetTrace,
    pub sync_log: Vec<SyncLogRow>,
    pub init_branch: Option<InitBranch>,
    pub inits_received: u32,
    /// Matches that paired a follow-up with a different broadcast (harness ground truth).
    pub mispairings: u64,
    pub match_failures: u64,
}

impl SlaveReport {
    pub fn sync_log_csv(&self) -> String {
        let mut s = String::from(SyncLogRow::CSV_HEADER);
        s.push('\n');
        for row in &self.sync_log {
            s.push_str(&row.to_csv_line());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbisOutcome {
    pub slaves: Vec<SlaveReport>,
    pub broadcasts: u64,
    pub follow_ups_sent: u64,
    pub ta_saturations: u64,
    pub events_dispatched: u64,
    pub event_log: Option<String>,
}

#[derive(Debug, Clone)]
enum RbisEvent {
    MasterStartup,
    PbchEmit,
    PbchArrive(PbchBroadcast),
    InitArrive(InitMsg),
    FollowUpArrive(FollowUpMsg),
    TaUpdate,
    Sample,
}

impl EventPayload for RbisEvent {
    fn kind(&self) -> &'static str {
        match self {
            RbisEvent::MasterStartup => "master_startup",
            RbisEvent::PbchEmit => "pbch_emit",
            RbisEvent::PbchArrive(_) => "pbch_rx",
            RbisEvent::InitArrive(_) => "init_rx",
            RbisEvent::FollowUpArrive(_) => "follow_up_rx",
            RbisEvent::TaUpdate => "ta_update",
            RbisEvent::Sample => "sample",
        }
    }
}

struct Ue {
    clock: ClockState,
    timestamp: TimestampModel,
    ts_rng: RngStream,
    ta: TimingAdvanceState,
}

struct SlaveSide {
    ue: usize,
    protocol: SlaveUe,
    channel_rng: RngStream,
    last_delivery: SimTime,
    corrected: bool,
    rounds: u64,
    report: SlaveReport,
}

struct World<'a> {
    cfg: &'a RbisConfig,
    ues: Vec<Ue>,
    receivers: Vec<Receiver>,
    master_ue: usize,
    master: MasterUe,
    slaves: Vec<SlaveSide>,
    /// UE index → slave slot.
    slave_of: Vec<Option<usize>>,
    broadcasts: u64,
    ta_saturations: u64,
}

fn node(ue: usize) -> NodeId {
    NodeId(ue as u32 + 1)
}

impl World<'_> {
    fn read_clock(&mut self, ue: usize, now: SimTime) -> i64 {
        let u = &mut self.ues[ue];
        u.clock.read(&u.timestamp, now, &mut u.ts_rng)
    }

    fn send(&mut self, sched: &mut Scheduler<RbisEvent>, slot: usize, payload: RbisEvent) {
        let (lo, hi) = self.cfg.follow_up_delay_ps;
        let side = &mut self.slaves[slot];
        let delay = side.channel_rng.uniform_u64(lo, hi);
        let at = (sched.now() + delay).max(side.last_delivery);
        side.last_delivery = at;
        sched
            .schedule(at, node(side.ue), payload)
            .expect("delivery is never in the past");
    }

    fn attach(&mut self) -> Result<(), RunError> {
        let mu = self.cfg.gnb.numerology;
        for (i, rx) in self.receivers.iter().enumerate() {
            let t_prop = propagation_delay(rx.distance.at(SimTime::ZERO))?;
            let tac = gnb_measure_tac(t_prop, mu, TacMode::Rar);
            self.ta_saturations += tac.saturated as u64;
            self.ues[i].ta.n_ta = ta_from_rar(tac.index, mu)?;
        }
        self.master.set_n_ta(self.ues[self.master_ue].ta.n_ta);
        Ok(())
    }

    fn ta_update(&mut self, now: SimTime) -> Result<(), RunError> {
        let mu = self.cfg.gnb.numerology;
        for (i, rx) in self.receivers.iter().enumerate() {
            let t_prop = propagation_delay(rx.distance.at(now))?;
            let n_ta = self.ues[i].ta.n_ta;
            let tac = gnb_measure_tac(t_prop, mu, TacMode::MacCe { n_ta_current: n_ta });
            self.ta_saturations += tac.saturated as u64;
            self.ues[i].ta.n_ta = ta_update_macce(n_ta, tac.index, mu)?;
        }
        self.master.set_n_ta(self.ues[self.master_ue].ta.n_ta);
        Ok(())
    }

    fn apply(&mut self, slot: usize, c: Correction, now: SimTime) -> Result<(), RunError> {
        let master_clock = self.ues[self.master_ue].clock;
        let side = &mut self.slaves[slot];
        let clock = &mut self.ues[side.ue].clock;
        clock.step(c.delta_ps, now);
        side.corrected = true;
        side.rounds += 1;
        if c.pair.broadcast != c.follow_up.broadcast {
            side.report.mispairings += 1;
        }
        side.report.sync_log.push(SyncLogRow {
            round: side.rounds,
            true_time: now,
            sfn: c.follow_up.sfn_ref,
            raw_delta_ps: c.raw_ps,
            runtime_term_ps: c.runtime_term_ps,
            applied_delta_ps: c.delta_ps,
            true_offset_after_ps: true_offset(&master_clock, clock, now),
            match_failures: side.protocol.match_failures(),
        });
        if self.cfg.sampling == Sampling::PerRound {
            record_offset_sample(&mut side.report.trace, &master_clock, clock, now)?;
        }
        Ok(())
    }

    fn handle(&mut self, sched: &mut Scheduler<RbisEvent>, target: NodeId, ev: RbisEvent) -> Result<(), RunError> {
        let now = sched.now();
        match ev {
            RbisEvent::MasterStartup => {
                let t0 = self.read_clock(self.master_ue, now);
                let msg = self.master.on_startup(t0);
                for slot in 0..self.slaves.len() {
                    self.send(sched, slot, RbisEvent::InitArrive(msg));
                }
            }
            RbisEvent::PbchEmit => {
                let b = broadcast_pbch(&self.cfg.gnb, now, self.broadcasts, &mut self.receivers)?;
                self.broadcasts += 1;
                for (ue, at) in b.arrivals.iter().enumerate() {
                    sched.schedule(*at, node(ue), RbisEvent::PbchArrive(b.pbch))?;
                }
                if b.next_at <= self.cfg.duration {
                    sched.schedule(b.next_at, GNB, RbisEvent::PbchEmit)?;
                }
            }
            RbisEvent::PbchArrive(pbch) => {
                let ue = target.0 as usize - 1;
                let t_local = self.read_clock(ue, now);
                if ue == self.master_ue {
                    let fu = self.master.on_pbch(&pbch, t_local);
                    for slot in 0..self.slaves.len() {
                        self.send(sched, slot, RbisEvent::FollowUpArrive(fu));
                    }
                } else if let Some(slot) = self.slave_of[ue] {
                    let ta = self.ues[ue].ta;
                    let corrections = self.slaves[slot].protocol.on_pbch(&pbch, t_local, &ta);
                    for c in corrections {
                        self.apply(slot, c, now)?;
                    }
                }
            }
            RbisEvent::InitArrive(msg) => {
                let ue = target.0 as usize - 1;
                let slot = self.slave_of[ue].expect("init is only sent to slaves");
                let t0_local = self.read_clock(ue, now);
                let side = &mut self.slaves[slot];
                side.report.inits_received += 1;
                if let Some(outcome) = side.protocol.on_init(msg, t0_local) {
                    side.report.init_branch = Some(outcome.branch);
                    if let Some(step) = outcome.step_ps {
                        self.ues[ue].clock.step(step, now);
                    }
                }
            }
            RbisEvent::FollowUpArrive(fu) => {
                let ue = target.0 as usize - 1;
                let slot = self.slave_of[ue].expect("follow-ups are only sent to slaves");
                let ta = self.ues[ue].ta;
                if let FollowUpOutcome::Applied(c) = self.slaves[slot].protocol.on_follow_up(fu, &ta) {
                    self.apply(slot, c, now)?;
                }
            }
            RbisEvent::TaUpdate => {
                self.ta_update(now)?;
                let next = now + self.cfg.gnb.ta_update_interval_ms * crate::sim::PS_PER_MS;
                if next <= self.cfg.duration {
                    sched.schedule(next, GNB, RbisEvent::TaUpdate)?;
                }
            }
            RbisEvent::Sample => {
                let master_clock = self.ues[self.master_ue].clock;
                for side in &mut self.slaves {
                    if side.corrected {
                        let clock = &self.ues[side.ue].clock;
                        record_offset_sample(&mut side.report.trace, &master_clock, clock, now)?;
                    }
                }
                if let Sampling::Periodic { interval_ps } = self.cfg.sampling {
                    let next = now + interval_ps;
                    if next <= self.cfg.duration {
                        sched.schedule(next, GNB, RbisEvent::Sample)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Run one RBIS scenario to completion.
pub fn run_rbis(cfg: &RbisConfig) -> Result<RbisOutcome, RunError> {
    cfg.validate()?;
    let n_ta_off = cfg.gnb.n_ta_off();
    let master_ue = cfg.ues.iter().position(|u| u.role == Role::Master).expect("validated");
    let ues: Vec<Ue> = cfg
        .ues
        .iter()
        .enumerate()
        .map(|(i, u)| Ue {
            clock: u.clock,
            timestamp: u.timestamp,
            ts_rng: RngStream::new(cfg.seed, STREAM_TIMESTAMP + i as u64),
            ta: TimingAdvanceState { n_ta: 0, n_ta_off },
        })
        .collect();
    let receivers = cfg
        .ues
        .iter()
        .enumerate()
        .map(|(i, u)| Receiver {
            distance: u.distance.clone(),
            toa_rng: RngStream::new(cfg.seed, STREAM_TOA + i as u64),
        })
        .collect();
    let slave_cfg = SlaveConfig {
        mode: cfg.mode,
        literal_init: cfg.literal_init,
        ssb_period_ms: cfg.gnb.ssb_period_ms,
        ..SlaveConfig::default()
    };
    let mode_label = format!("rbis/{}", cfg.mode);
    let mut slave_of = vec![None; cfg.ues.len()];
    let slaves: Vec<SlaveSide> = cfg
        .ues
        .iter()
        .enumerate()
        .filter(|(_, u)| u.role == Role::Slave)
        .enumerate()
        .map(|(slot, (i, u))| {
            slave_of[i] = Some(slot);
            SlaveSide {
                ue: i,
                protocol: SlaveUe::new(slave_cfg),
                channel_rng: RngStream::new(cfg.seed, STREAM_CHANNEL + i as u64),
                last_delivery: SimTime::ZERO,
                corrected: false,
                rounds: 0,
                report: SlaveReport {
                    name: u.name.clone(),
                    trace: OffsetTrace::new(TraceMeta {
                        scenario: cfg.scenario.clone(),
                        seed: cfg.seed,
                        mode: mode_label.clone(),
                    }),
                    sync_log: Vec::new(),
                    init_branch: None,
                    inits_received: 0,
                    mispairings: 0,
                    match_failures: 0,
                },
            }
        })
        .collect();

    let mut world = World {
        cfg,
        ues,
        receivers,
        master_ue,
        master: MasterUe::new(TimingAdvanceState { n_ta: 0, n_ta_off }),
        slaves,
        slave_of,
        broadcasts: 0,
        ta_saturations: 0,
    };
    world.attach()?;

    let mut sched = Scheduler::new();
    if cfg.event_log {
        sched.enable_event_log();
    }
    sched.schedule(SimTime::ZERO, node(master_ue), RbisEvent::MasterStartup)?;
    sched.schedule(SimTime::ZERO, GNB, RbisEvent::PbchEmit)?;
    sched.schedule(
        SimTime::from_ms(cfg.gnb.ta_update_interval_ms),
        GNB,
        RbisEvent::TaUpdate,
    )?;
    if let Sampling::Periodic { interval_ps } = cfg.sampling {
        sched.schedule(SimTime::from_ps(interval_ps), GNB, RbisEvent::Sample)?;
    }
    let dispatched = sched.run_until(cfg.duration, |s, ev| world.handle(s, ev.target, ev.payload))?;

    let slaves = world
        .slaves
        .into_iter()
        .map(|mut side| {
            side.report.match_failures = side.protocol.match_failures();
            side.report
        })
        .collect();
    Ok(RbisOutcome {
        slaves,
        broadcasts: world.broadcasts,
        follow_ups_sent: world.master.follow_ups_sent(),
        ta_saturations: world.ta_saturations,
        events_dispatched: dispatched,
        event_log: sched.take_event_log(),
    })
}
