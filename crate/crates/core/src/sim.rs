//! Deterministic discrete-event scheduler and seeded random streams.
//!
//! All simulated time is integer picoseconds. Events that fire at the same
//! instant are dispatched in insertion order, so a run is a pure function of
//! its configuration and seed.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::{self, Write as _};
use std::ops::Add;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::SimError;

pub const PS_PER_NS: u64 = 1_000;
pub const PS_PER_US: u64 = 1_000_000;
pub const PS_PER_MS: u64 = 1_000_000_000;
pub const PS_PER_S: u64 = 1_000_000_000_000;

/// True (simulation) time in integer picoseconds since the simulation epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * PS_PER_NS)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * PS_PER_US)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * PS_PER_MS)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * PS_PER_S)
    }

    /// Seconds rounded to the nearest picosecond. Negative input clamps to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * PS_PER_S as f64).round().max(0.0) as u64)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / PS_PER_S as f64
    }

    /// Picoseconds elapsed since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;

    fn add(self, ps: u64) -> SimTime {
        SimTime(self.0 + ps)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

/// Identifies the node an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Implemented by event payloads so the scheduler can label log lines.
pub trait EventPayload {
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub target: NodeId,
    pub payload: P,
    pub seq: u64,
}

/// Returned by [`Scheduler::schedule`]; allows cancelling a pending event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.fire_at == other.0.fire_at && self.0.seq == other.0.seq
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

/// Single global event queue. Dispatch order is a function of `(fire_at, seq)` only.
pub struct Scheduler<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    cancelled: HashSet<u64>,
    log: Option<String>,
}

impl<P: EventPayload> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: EventPayload> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            log: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    /// Record one tab-separated line (`fire_at_ps  node_id  payload_kind`) per dispatched event.
    pub fn enable_event_log(&mut self) {
        self.log.get_or_insert_with(String::new);
    }

    pub fn take_event_log(&mut self) -> Option<String> {
        self.log.take()
    }

    pub fn schedule(&mut self, fire_at: SimTime, target: NodeId, payload: P) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduleInPast { fire_at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event {
            fire_at,
            target,
            payload,
            seq,
        }));
        Ok(EventHandle(seq))
    }

    /// Schedule relative to the current time; cannot be in the past.
    pub fn schedule_in(&mut self, delay_ps: u64, target: NodeId, payload: P) -> EventHandle {
        let at = self.now + delay_ps;
        self.schedule(at, target, payload)
            .expect("relative schedule is never in the past")
    }

    /// Cancel a pending event. Cancelling an event that already fired is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        if !self.queue.iter().any(|q| q.0.seq == handle.0) {
            return false;
        }
        self.cancelled.insert(handle.0)
    }

    /// Dispatch every event with `fire_at <= t_end` in `(fire_at, seq)` order.
    ///
    /// The handler may schedule further events; those that fall within `t_end`
    /// are dispatched in the same call. The first handler error aborts the run.
    pub fn run_until<E, F>(&mut self, t_end: SimTime, mut handler: F) -> Result<u64, E>
    where
        F: FnMut(&mut Scheduler<P>, Event<P>) -> Result<(), E>,
    {
        let mut dispatched = 0;
        while let Some(head) = self.queue.peek() {
            if head.0.fire_at > t_end {
                break;
            }
            let Queued(event) = self.queue.pop().expect("peeked");
            if self.cancelled.remove(&event.seq) {
                continue;
            }
            self.now = event.fire_at;
            if let Some(log) = self.log.as_mut() {
                let _ = writeln!(
                    log,
                    "{}\t{}\t{}",
                    event.fire_at.as_ps(),
                    event.target,
                    event.payload.kind()
                );
            }
            dispatched += 1;
            handler(self, event)?;
        }
        Ok(dispatched)
    }
}

/// SplitMix64 finalizer. Used to derive independent stream and sub-run seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mix a master seed with a stream or variant index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Seeded random stream owned by one node. Identical `(seed, stream)` pairs
/// produce identical draws on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream {
            seed,
            stream,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, stream)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Zero-mean Gaussian draw with standard deviation `sigma`.
    pub fn gaussian(&mut self, sigma: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        z * sigma
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn uniform_u64(&mut self, lo: u64, hi: u64) -> u64 {
        self.rng.random_range(lo..=hi)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    pub fn coin(&mut self) -> bool {
        self.rng.random::<bool>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    enum Tag {
        A,
        B,
        Tick(u32),
    }

    impl EventPayload for Tag {
        fn kind(&self) -> &'static str {
            match self {
                Tag::A => "a",
                Tag::B => "b",
                Tag::Tick(_) => "tick",
            }
        }
    }

    fn collect(s: &mut Scheduler<Tag>, t_end: SimTime) -> (u64, Vec<(u64, Tag)>) {
        let mut seen = Vec::new();
        let n = s
            .run_until::<(), _>(t_end, |_, ev| {
                seen.push((ev.fire_at.as_ps(), ev.payload));
                Ok(())
            })
            .unwrap();
        (n, seen)
    }

    #[test]
    fn event_at_zero_dispatches_first() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_ps(5), NodeId(0), Tag::B).unwrap();
        s.schedule(SimTime::ZERO, NodeId(0), Tag::A).unwrap();
        let (_, seen) = collect(&mut s, SimTime::from_secs(1));
        assert_eq!(seen[0], (0, Tag::A));
    }

    #[test]
    fn equal_times_follow_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_ps(100), NodeId(0), Tag::A).unwrap();
        s.schedule(SimTime::from_ps(100), NodeId(1), Tag::B).unwrap();
        let (_, seen) = collect(&mut s, SimTime::from_ps(100));
        assert_eq!(seen, vec![(100, Tag::A), (100, Tag::B)]);
    }

    #[test]
    fn scheduling_in_the_past_is_an_error() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_ps(60), NodeId(0), Tag::A).unwrap();
        collect(&mut s, SimTime::from_ps(60));
        assert_eq!(s.now(), SimTime::from_ps(60));
        let err = s.schedule(SimTime::from_ps(50), NodeId(0), Tag::B).unwrap_err();
        assert!(matches!(err, SimError::ScheduleInPast { .. }));
    }

    #[test]
    fn empty_queue_dispatches_nothing() {
        let mut s: Scheduler<Tag> = Scheduler::new();
        let (n, _) = collect(&mut s, SimTime::from_secs(1));
        assert_eq!(n, 0);
        assert_eq!(s.now(), SimTime::ZERO);
    }

    #[test]
    fn only_events_up_to_t_end_are_dispatched() {
        let mut s = Scheduler::new();
        for ps in [10, 20, 30, 40] {
            s.schedule(SimTime::from_ps(ps), NodeId(0), Tag::A).unwrap();
        }
        let (n, _) = collect(&mut s, SimTime::from_ps(30));
        assert_eq!(n, 3);
        assert_eq!(s.now(), SimTime::from_ps(30));
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn self_rescheduling_timer_runs_within_same_call() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::ZERO, NodeId(0), Tag::Tick(0)).unwrap();
        let mut ticks = Vec::new();
        let n = s
            .run_until::<(), _>(SimTime::from_ps(1_000), |sched, ev| {
                if let Tag::Tick(k) = ev.payload {
                    ticks.push(ev.fire_at.as_ps());
                    sched.schedule_in(250, NodeId(0), Tag::Tick(k + 1));
                }
                Ok(())
            })
            .unwrap();
        assert_eq!(n, 5);
        assert_eq!(ticks, vec![0, 250, 500, 750, 1_000]);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn cancelled_events_are_skipped() {
        let mut s = Scheduler::new();
        let h = s.schedule(SimTime::from_ps(10), NodeId(0), Tag::A).unwrap();
        s.schedule(SimTime::from_ps(20), NodeId(0), Tag::B).unwrap();
        assert!(s.cancel(h));
        assert!(!s.cancel(h));
        let (n, seen) = collect(&mut s, SimTime::from_ps(100));
        assert_eq!(n, 1);
        assert_eq!(seen, vec![(20, Tag::B)]);
        assert!(!s.cancel(h));
    }

    #[test]
    fn event_log_lines_are_tab_separated() {
        let mut s = Scheduler::new();
        s.enable_event_log();
        s.schedule(SimTime::from_ps(7), NodeId(3), Tag::A).unwrap();
        collect(&mut s, SimTime::from_ps(7));
        assert_eq!(s.take_event_log().unwrap(), "7\t3\ta\n");
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(42, 1);
        let mut b = RngStream::new(42, 1);
        let mut c = RngStream::new(42, 2);
        let xa: Vec<f64> = (0..8).map(|_| a.gaussian(1.0)).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.gaussian(1.0)).collect();
        let xc: Vec<f64> = (0..8).map(|_| c.gaussian(1.0)).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
    }
}
