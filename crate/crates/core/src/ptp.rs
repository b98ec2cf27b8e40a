//! End-to-end two-way time transfer (IEEE 1588 style) over an asymmetric link.
//!
//! Used as a baseline: the offset estimate assumes equal uplink and downlink
//! delay, so any asymmetry shows up as a bias of half its size.

use crate::analysis::{OffsetTrace, TraceMeta};
use crate::clock::{ClockState, TimestampModel};
use crate::error::{RunError, ValidationError};
use crate::rbis::Sampling;
use crate::sim::{EventPayload, NodeId, RngStream, Scheduler, SimTime, PS_PER_MS, PS_PER_US};

const MASTER: NodeId = NodeId(1);
const SLAVE: NodeId = NodeId(2);

const STREAM_MASTER_TS: u64 = 0x400;
const STREAM_SLAVE_TS: u64 = 0x401;
const STREAM_DOWNLINK: u64 = 0x402;
const STREAM_UPLINK: u64 = 0x403;

/// Timestamps of one exchange. `t1`/`t4` are master clock readings (SYNC sent,
/// DELAY_REQ received); `t2`/`t3` are slave readings (SYNC received, DELAY_REQ sent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PtpExchange {
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    pub t4: i64,
}

impl PtpExchange {
    pub fn new(t1: i64, t2: i64, t3: i64, t4: i64) -> Self {
        PtpExchange { t1, t2, t3, t4 }
    }

    fn legs(&self) -> (i128, i128) {
        (self.t2 as i128 - self.t1 as i128, self.t4 as i128 - self.t3 as i128)
    }
}

/// Mean path delay estimate. Halves are exact in f64 for any realistic range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    pub delay_ps: f64,
    /// Set when the estimate is negative, i.e. asymmetry exceeds the physical delay.
    pub negative: bool,
}

pub fn ptp_delay(x: &PtpExchange) -> DelayEstimate {
    let (down, up) = x.legs();
    let delay_ps = (down + up) as f64 / 2.0;
    DelayEstimate {
        delay_ps,
        negative: delay_ps < 0.0,
    }
}

/// Slave-minus-master offset estimate.
pub fn ptp_offset(x: &PtpExchange) -> f64 {
    let (down, up) = x.legs();
    (down - up) as f64 / 2.0
}

/// One direction of the link: a fixed delay plus zero-mean Gaussian jitter.
/// Draws that would make the delay negative are clamped to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDirection {
    pub delay_ps: u64,
    pub jitter_sigma_ps: f64,
}

impl LinkDirection {
    pub fn constant(delay_ps: u64) -> Self {
        LinkDirection {
            delay_ps,
            jitter_sigma_ps: 0.0,
        }
    }

    fn sample(&self, rng: &mut RngStream) -> u64 {
        if self.jitter_sigma_ps == 0.0 {
            return self.delay_ps;
        }
        let d = self.delay_ps as f64 + rng.gaussian(self.jitter_sigma_ps);
        d.round().max(0.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtpLink {
    /// Master to slave (SYNC).
    pub downlink: LinkDirection,
    /// Slave to master (DELAY_REQ).
    pub uplink: LinkDirection,
}

impl PtpLink {
    pub fn symmetric(delay_ps: u64) -> Self {
        PtpLink {
            downlink: LinkDirection::constant(delay_ps),
            uplink: LinkDirection::constant(delay_ps),
        }
    }

    /// Uplink is `asymmetry_ps` longer than the downlink.
    pub fn asymmetric(delay_ps: u64, asymmetry_ps: u64) -> Self {
        PtpLink {
            downlink: LinkDirection::constant(delay_ps),
            uplink: LinkDirection::constant(delay_ps + asymmetry_ps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtpConfig {
    pub scenario: String,
    pub seed: u64,
    pub rounds: u64,
    pub sync_interval_ps: u64,
    /// Slave residence time between receiving SYNC and sending DELAY_REQ.
    pub turnaround_ps: u64,
    pub link: PtpLink,
    pub master_clock: ClockState,
    pub slave_clock: ClockState,
    pub master_timestamp: TimestampModel,
    pub slave_timestamp: TimestampModel,
    /// Step the slave clock by each offset estimate. Off gives open-loop estimates.
    pub apply_corrections: bool,
    pub sampling: Sampling,
    pub event_log: bool,
}

impl Default for PtpConfig {
    fn default() -> Self {
        PtpConfig {
            scenario: "ptp".into(),
            seed: 0,
            rounds: 100,
            sync_interval_ps: 125 * PS_PER_MS,
            turnaround_ps: PS_PER_MS,
            link: PtpLink::symmetric(500 * PS_PER_US),
            master_clock: ClockState::ideal(),
            slave_clock: ClockState::ideal(),
            master_timestamp: TimestampModel::noiseless(),
            slave_timestamp: TimestampModel::noiseless(),
            apply_corrections: true,
            sampling: Sampling::PerRound,
            event_log: false,
        }
    }
}

impl PtpConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.rounds == 0 {
            return Err(ValidationError::Invalid("ptp rounds must be at least 1".into()));
        }
        if self.sync_interval_ps == 0 {
            return Err(ValidationError::Invalid("ptp sync interval must be positive".into()));
        }
        let exchange = self.link.downlink.delay_ps + self.turnaround_ps + self.link.uplink.delay_ps;
        if exchange >= self.sync_interval_ps {
            return Err(ValidationError::Invalid(format!(
                "ptp exchange takes {exchange} ps, which does not fit in the {} ps sync interval",
                self.sync_interval_ps
            )));
        }
        for dir in [self.link.downlink, self.link.uplink] {
            ValidationError::check_range("ptp jitter sigma", dir.jitter_sigma_ps, 0.0, f64::MAX)?;
        }
        if let Sampling::Periodic { interval_ps: 0 } = self.sampling {
            return Err(ValidationError::Invalid("sampling interval must be positive".into()));
        }
        self.master_timestamp.validate()?;
        self.slave_timestamp.validate()
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_ps(self.rounds * self.sync_interval_ps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtpRound {
    pub round: u64,
    pub completed_at: SimTime,
    pub exchange: PtpExchange,
    pub delay: DelayEstimate,
    pub offset_ps: f64,
    pub applied_ps: i64,
    pub true_offset_after_ps: i64,
}

impl PtpRound {
    pub const CSV_HEADER: &'static str =
        "round,true_time_ps,t1_ps,t2_ps,t3_ps,t4_ps,delay_ps,offset_ps,applied_delta_ps,true_offset_after_ps";

    pub fn to_csv_line(&self) -> String {
        let x = &self.exchange;
        format!(
            "{},{},{},{},{},{},{:.1},{:.1},{},{}",
            self.round,
            self.completed_at.as_ps(),
            x.t1,
            x.t2,
            x.t3,
            x.t4,
            self.delay.delay_ps,
            self.offset_ps,
            self.applied_ps,
            self.true_offset_after_ps
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtpOutcome {
    /// Ground-truth master-minus-slave offset, sampled like an RBIS trace.
    pub trace: OffsetTrace,
    pub rounds: Vec<PtpRound>,
    pub negative_delays: u64,
    pub event_log: Option<String>,
}

impl PtpOutcome {
    pub fn sync_log_csv(&self) -> String {
        let mut s = String::from(PtpRound::CSV_HEADER);
        s.push('\n');
        for r in &self.rounds {
            s.push_str(&r.to_csv_line());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
enum PtpEvent {
    SyncSend,
    SyncArrive { t1: i64 },
    DelayReqSend { t1: i64, t2: i64 },
    DelayReqArrive { t1: i64, t2: i64, t3: i64 },
    Sample,
}

impl EventPayload for PtpEvent {
    fn kind(&self) -> &'static str {
        match self {
            PtpEvent::SyncSend => "ptp_sync_tx",
            PtpEvent::SyncArrive { .. } => "ptp_sync_rx",
            PtpEvent::DelayReqSend { .. } => "ptp_delay_req_tx",
            PtpEvent::DelayReqArrive { .. } => "ptp_delay_req_rx",
            PtpEvent::Sample => "sample",
        }
    }
}

/// Run `cfg.rounds` four-timestamp exchanges, one per sync interval.
///
/// The DELAY_RESP carrying `t4` back to the slave is modelled as delivered at
/// the instant `t4` is taken; its delay does not enter either estimate.
pub fn run_ptp_session(cfg: &PtpConfig) -> Result<PtpOutcome, RunError> {
    cfg.validate()?;
    let master = cfg.master_clock;
    let mut slave = cfg.slave_clock;
    let mut master_ts = RngStream::new(cfg.seed, STREAM_MASTER_TS);
    let mut slave_ts = RngStream::new(cfg.seed, STREAM_SLAVE_TS);
    let mut down_rng = RngStream::new(cfg.seed, STREAM_DOWNLINK);
    let mut up_rng = RngStream::new(cfg.seed, STREAM_UPLINK);

    let mut trace = OffsetTrace::new(TraceMeta {
        scenario: cfg.scenario.clone(),
        seed: cfg.seed,
        mode: "ptp".into(),
    });
    let mut rounds = Vec::new();
    let mut negative_delays = 0;
    let mut syncs_sent = 0;
    let end = cfg.duration();

    let mut sched = Scheduler::new();
    if cfg.event_log {
        sched.enable_event_log();
    }
    sched.schedule(SimTime::ZERO, MASTER, PtpEvent::SyncSend)?;
    if let Sampling::Periodic { interval_ps } = cfg.sampling {
        sched.schedule(SimTime::from_ps(interval_ps), MASTER, PtpEvent::Sample)?;
    }

    sched.run_until(end, |s, ev| -> Result<(), RunError> {
        let now = s.now();
        match ev.payload {
            PtpEvent::SyncSend => {
                syncs_sent += 1;
                let t1 = master.read(&cfg.master_timestamp, now, &mut master_ts);
                s.schedule_in(
                    cfg.link.downlink.sample(&mut down_rng),
                    SLAVE,
                    PtpEvent::SyncArrive { t1 },
                );
                if syncs_sent < cfg.rounds {
                    s.schedule_in(cfg.sync_interval_ps, MASTER, PtpEvent::SyncSend);
                }
            }
            PtpEvent::SyncArrive { t1 } => {
                let t2 = slave.read(&cfg.slave_timestamp, now, &mut slave_ts);
                s.schedule_in(cfg.turnaround_ps, SLAVE, PtpEvent::DelayReqSend { t1, t2 });
            }
            PtpEvent::DelayReqSend { t1, t2 } => {
                let t3 = slave.read(&cfg.slave_timestamp, now, &mut slave_ts);
                s.schedule_in(
                    cfg.link.uplink.sample(&mut up_rng),
                    MASTER,
                    PtpEvent::DelayReqArrive { t1, t2, t3 },
                );
            }
            PtpEvent::DelayReqArrive { t1, t2, t3 } => {
                let t4 = master.read(&cfg.master_timestamp, now, &mut master_ts);
                let exchange = PtpExchange { t1, t2, t3, t4 };
                let delay = ptp_delay(&exchange);
                negative_delays += delay.negative as u64;
                let offset_ps = ptp_offset(&exchange);
                let applied_ps = if cfg.apply_corrections {
                    let step = -(offset_ps.round() as i64);
                    slave.step(step, now);
                    step
                } else {
                    0
                };
                let true_after = crate::clock::true_offset(&master, &slave, now);
                rounds.push(PtpRound {
                    round: rounds.len() as u64 + 1,
                    completed_at: now,
                    exchange,
                    delay,
                    offset_ps,
                    applied_ps,
                    true_offset_after_ps: true_after,
                });
                if cfg.sampling == Sampling::PerRound {
                    trace.record(now, true_after)?;
                }
            }
            PtpEvent::Sample => {
                if !rounds.is_empty() {
                    trace.record(now, crate::clock::true_offset(&master, &slave, now))?;
                }
                if let Sampling::Periodic { interval_ps } = cfg.sampling {
                    if now.as_ps() + interval_ps <= end.as_ps() {
                        s.schedule_in(interval_ps, MASTER, PtpEvent::Sample);
                    }
                }
            }
        }
        Ok(())
    })?;

    Ok(PtpOutcome {
        trace,
        rounds,
        negative_delays,
        event_log: sched.take_event_log(),
    })
}
