//! 5G NR air interface: SSB/PBCH broadcast with the system frame number,
//! propagation delay and the timing-advance (TA) machinery.
//!
//! TA quantities are integers in units of `Tc = 1/(480 kHz · 4096)`. Conversions
//! to picoseconds go through the exact rational value of `Tc` and round once.

use std::fmt;

use num_rational::Ratio;

use crate::error::{SimError, ValidationError};
use crate::sim::{RngStream, SimTime, PS_PER_MS};

/// `Tc` in picoseconds is exactly 10¹² / (480 000 · 4096) = 390625 / 768.
pub const TC_PS_NUM: i128 = 390_625;
pub const TC_PS_DEN: i128 = 768;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Rounded light speed used when quoting TA steps as a distance.
/// The commonly tabulated step distances (78.13 m, 39.06 m, ...) use this value.
pub const TA_TABLE_LIGHT_SPEED: f64 = 3.0e8;

pub const SFN_MODULUS: u16 = 1024;
pub const SFN_TICK_PS: u64 = 10 * PS_PER_MS;
pub const HALF_FRAME_PS: u64 = 5 * PS_PER_MS;

pub const RAR_TAC_MAX: u16 = 3846;
pub const MACCE_TAC_MAX: u16 = 63;
/// MAC CE index that encodes a zero adjustment.
pub const MACCE_TAC_ZERO: i64 = 31;

/// Exact `Tc` in picoseconds and its nearest-picosecond rounding.
pub fn tc_picoseconds() -> (Ratio<i128>, i64) {
    let tc = Ratio::new(TC_PS_NUM, TC_PS_DEN);
    (tc, round_ps(tc))
}

/// Exact duration of `n` Tc units in picoseconds.
pub fn tc_units_to_ps(n: i128) -> Ratio<i128> {
    Ratio::new(n * TC_PS_NUM, TC_PS_DEN)
}

/// Nearest picosecond, ties away from zero.
pub fn round_ps(value: Ratio<i128>) -> i64 {
    value.round().to_integer() as i64
}

/// Subcarrier-spacing index µ with Δf = 2^µ · 15 kHz. Restricted to µ ∈ {0, 1, 2, 3}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Numerology(u8);

impl Numerology {
    pub fn new(mu: u8) -> Result<Self, ValidationError> {
        if mu <= 3 {
            Ok(Numerology(mu))
        } else {
            Err(ValidationError::OutOfRange {
                what: "mu",
                value: mu as f64,
                min: 0.0,
                max: 3.0,
            })
        }
    }

    pub fn mu(self) -> u8 {
        self.0
    }

    pub fn scs_khz(self) -> u32 {
        15 << self.0
    }

    /// One TA adjustment step, `16 · 64 / 2^µ`, in Tc units.
    pub fn ta_step_tc(self) -> i64 {
        1024 >> self.0
    }

    pub fn ta_step_ps(self) -> Ratio<i128> {
        tc_units_to_ps(self.ta_step_tc() as i128)
    }

    pub fn ta_step_ns(self) -> f64 {
        let step = self.ta_step_ps();
        *step.numer() as f64 / *step.denom() as f64 / 1_000.0
    }

    /// Distance a UE moves (one way) before its TA changes by one step.
    pub fn ta_step_distance_m(self) -> f64 {
        self.ta_step_ns() * 1e-9 * TA_TABLE_LIGHT_SPEED / 2.0
    }
}

impl fmt::Display for Numerology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 10-bit system frame number; advances every 10 ms and wraps after 1023.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Sfn(u16);

impl Sfn {
    pub fn new(value: u16) -> Result<Self, ValidationError> {
        if value < SFN_MODULUS {
            Ok(Sfn(value))
        } else {
            Err(ValidationError::OutOfRange {
                what: "sfn",
                value: value as f64,
                min: 0.0,
                max: (SFN_MODULUS - 1) as f64,
            })
        }
    }

    pub fn at(true_time: SimTime) -> Sfn {
        Sfn(((true_time.as_ps() / SFN_TICK_PS) % SFN_MODULUS as u64) as u16)
    }

    pub fn value(self) -> u16 {
        self.0
    }

    pub fn wrapping_add(self, ticks: i64) -> Sfn {
        Sfn((self.0 as i64 + ticks).rem_euclid(SFN_MODULUS as i64) as u16)
    }

    /// Forward distance from `earlier` to `self` in SFN ticks, in `[0, 1024)`.
    pub fn ticks_since(self, earlier: Sfn) -> u16 {
        (self.0 + SFN_MODULUS - earlier.0) % SFN_MODULUS
    }
}

impl fmt::Display for Sfn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// SFN of the frame containing `true_time`.
pub fn sfn_at(true_time: SimTime) -> Sfn {
    Sfn::at(true_time)
}

/// Whether `true_time` falls in the second 5 ms half of its radio frame.
pub fn half_frame_at(true_time: SimTime) -> bool {
    (true_time.as_ps() / HALF_FRAME_PS) % 2 == 1
}

/// Line-of-sight propagation delay, rounded to the nearest picosecond.
pub fn propagation_delay(distance_m: f64) -> Result<SimTime, ValidationError> {
    ValidationError::check_range("distance_m", distance_m, 0.0, f64::MAX)?;
    Ok(SimTime::from_ps((distance_m * 1e12 / SPEED_OF_LIGHT).round() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnbConfig {
    pub ssb_period_ms: u32,
    pub numerology: Numerology,
    /// Receive-to-transmit switch offset `T_off`, common to every UE.
    pub t_off_ps: i64,
    /// Per-broadcast, per-UE Gaussian ToA jitter (multipath). Zero disables it.
    pub toa_jitter_sigma_ps: f64,
    /// Interval between MAC CE timing-advance updates.
    pub ta_update_interval_ms: u64,
}

impl Default for GnbConfig {
    fn default() -> Self {
        GnbConfig {
            ssb_period_ms: 20,
            numerology: Numerology(1),
            t_off_ps: 13_000_000,
            toa_jitter_sigma_ps: 0.0,
            ta_update_interval_ms: 1_000,
        }
    }
}

impl GnbConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        ValidationError::check_range("ssb_period_ms", self.ssb_period_ms as f64, 5.0, 160.0)?;
        ValidationError::check_range("t_off_ps", self.t_off_ps as f64, 0.0, f64::MAX)?;
        ValidationError::check_range("toa_jitter_sigma_ps", self.toa_jitter_sigma_ps, 0.0, f64::MAX)?;
        if self.ta_update_interval_ms == 0 {
            return Err(ValidationError::Invalid(
                "ta_update_interval_ms must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn ssb_period_ps(&self) -> u64 {
        self.ssb_period_ms as u64 * PS_PER_MS
    }

    /// `N_TA,off` in Tc units for the configured `T_off`.
    pub fn n_ta_off(&self) -> i64 {
        let (tc, _) = tc_picoseconds();
        (Ratio::from_integer(self.t_off_ps as i128) / tc).round().to_integer() as i64
    }
}

/// A UE's timing advance, `T_TA = (N_TA + N_TA,off) · Tc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TimingAdvanceState {
    pub n_ta: i64,
    pub n_ta_off: i64,
}

impl TimingAdvanceState {
    pub fn t_ta_exact(&self) -> Ratio<i128> {
        tc_units_to_ps((self.n_ta + self.n_ta_off) as i128)
    }

    pub fn t_ta_ps(&self) -> i64 {
        round_ps(self.t_ta_exact())
    }
}

/// `N_TA` from a random-access-response TA command.
pub fn ta_from_rar(n_tac_rar: u16, mu: Numerology) -> Result<i64, ValidationError> {
    if n_tac_rar > RAR_TAC_MAX {
        return Err(ValidationError::OutOfRange {
            what: "n_tac_rar",
            value: n_tac_rar as f64,
            min: 0.0,
            max: RAR_TAC_MAX as f64,
        });
    }
    Ok(n_tac_rar as i64 * mu.ta_step_tc())
}

/// Apply a MAC CE TA command; index 31 is a zero adjustment. Never goes below zero.
pub fn ta_update_macce(n_ta_old: i64, n_tac_mac: u16, mu: Numerology) -> Result<i64, ValidationError> {
    if n_tac_mac > MACCE_TAC_MAX {
        return Err(ValidationError::OutOfRange {
            what: "n_tac_mac",
            value: n_tac_mac as f64,
            min: 0.0,
            max: MACCE_TAC_MAX as f64,
        });
    }
    let adjusted = n_ta_old + (n_tac_mac as i64 - MACCE_TAC_ZERO) * mu.ta_step_tc();
    Ok(adjusted.max(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TacMode {
    Rar,
    /// Relative to the UE's current `N_TA`.
    MacCe {
        n_ta_current: i64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TacMeasurement {
    pub index: u16,
    /// The required correction did not fit the command's index range.
    pub saturated: bool,
}

/// Nearest integer to `q`, ties toward the smaller integer.
fn nearest_tie_down(q: Ratio<i128>) -> i128 {
    (q - Ratio::new(1, 2)).ceil().to_integer()
}

/// Idealized gNB measurement: the TA command whose `N_TA · Tc` best matches `2 · t_prop`.
pub fn gnb_measure_tac(t_prop: SimTime, mu: Numerology, mode: TacMode) -> TacMeasurement {
    let target_tc = Ratio::new(2 * t_prop.as_ps() as i128 * TC_PS_DEN, TC_PS_NUM);
    let step = mu.ta_step_tc() as i128;
    let (raw, lo, hi) = match mode {
        TacMode::Rar => (nearest_tie_down(target_tc / step), 0, RAR_TAC_MAX as i128),
        TacMode::MacCe { n_ta_current } => {
            let rel = nearest_tie_down((target_tc - n_ta_current as i128) / step);
            (rel + MACCE_TAC_ZERO as i128, 0, MACCE_TAC_MAX as i128)
        }
    };
    let index = raw.clamp(lo, hi);
    TacMeasurement {
        index: index as u16,
        saturated: index != raw,
    }
}

/// Piecewise-constant UE distance to the gNB over true time.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile {
    steps: Vec<(SimTime, f64)>,
}

impl DistanceProfile {
    pub fn constant(distance_m: f64) -> Result<Self, ValidationError> {
        Self::steps(vec![(SimTime::ZERO, distance_m)])
    }

    /// `steps` holds `(from, distance)` pairs; the first must start at zero
    /// and times must strictly increase.
    pub fn steps(steps: Vec<(SimTime, f64)>) -> Result<Self, ValidationError> {
        match steps.first() {
            Some((t, _)) if *t == SimTime::ZERO => {}
            _ => return Err(ValidationError::Invalid("distance profile must start at time 0".into())),
        }
        for w in steps.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(ValidationError::Invalid(
                    "distance profile times must strictly increase".into(),
                ));
            }
        }
        for (_, d) in &steps {
            ValidationError::check_range("distance_m", *d, 0.0, f64::MAX)?;
        }
        Ok(DistanceProfile { steps })
    }

    pub fn at(&self, t: SimTime) -> f64 {
        let idx = self.steps.partition_point(|(from, _)| *from <= t);
        self.steps[idx - 1].1
    }

    pub fn as_steps(&self) -> &[(SimTime, f64)] {
        &self.steps
    }
}

/// PBCH payload as seen by every receiver, plus the emission instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PbchBroadcast {
    pub sfn: Sfn,
    pub half_frame: bool,
    pub numerology: Numerology,
    pub emitted_at: SimTime,
    /// Broadcast sequence number. Ground truth for test harnesses; protocol
    /// logic must not read it.
    pub index: u64,
}

/// A UE attached to the gNB.
#[derive(Debug, Clone)]
pub struct Receiver {
    pub distance: DistanceProfile,
    pub toa_rng: RngStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub pbch: PbchBroadcast,
    /// Time of arrival at each receiver, in receiver order.
    pub arrivals: Vec<SimTime>,
    pub next_at: SimTime,
}

/// Emit one SSB at `now` and compute its arrival at each receiver.
pub fn broadcast_pbch(
    gnb: &GnbConfig,
    now: SimTime,
    index: u64,
    receivers: &mut [Receiver],
) -> Result<Broadcast, SimError> {
    let period = gnb.ssb_period_ps();
    if !now.as_ps().is_multiple_of(period) {
        return Err(SimError::MisalignedBroadcast {
            at: now,
            period_ps: period,
        });
    }
    let pbch = PbchBroadcast {
        sfn: Sfn::at(now),
        half_frame: half_frame_at(now),
        numerology: gnb.numerology,
        emitted_at: now,
        index,
    };
    let arrivals = receivers
        .iter_mut()
        .map(|rx| {
            let prop = propagation_delay(rx.distance.at(now))
                .expect("profile distances are validated")
                .as_ps() as i64;
            let jitter = if gnb.toa_jitter_sigma_ps > 0.0 {
                rx.toa_rng.gaussian(gnb.toa_jitter_sigma_ps).round() as i64
            } else {
                0
            };
            now + (prop + jitter).max(0) as u64
        })
        .collect();
    Ok(Broadcast {
        pbch,
        arrivals,
        next_at: now + period,
    })
}
