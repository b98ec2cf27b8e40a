//! Scenario files: TOML with dotted keys and one `[[ue]]` table per UE.
//!
//! Parsing happens in two passes. Serde handles syntax, unknown keys and
//! types; [`resolve`] then checks ranges and cross-field rules, using the
//! recorded spans so every diagnostic points at a line in the file.

use std::fmt;
use std::ops::Range;

use rbis_core::air::{DistanceProfile, GnbConfig, Numerology};
use rbis_core::analysis::DEFAULT_OUTLIER_BOUND_PS;
use rbis_core::clock::{ClockState, JitterDist, TimestampModel, MAX_DRIFT_PPM};
use rbis_core::ptp::{LinkDirection, PtpConfig, PtpLink};
use rbis_core::rbis::{CorrectionMode, RbisConfig, Role, Sampling, UeSetup};
use rbis_core::sim::{derive_seed, SimTime, PS_PER_MS, PS_PER_US};
use serde::{Deserialize, Serialize};
use toml::Spanned;

pub const SSB_PERIODS_MS: [u32; 6] = [5, 10, 20, 40, 80, 160];

/// A configuration problem, anchored to a line when the offending key is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(origin: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            origin: origin.into(),
            line: None,
            column: None,
            message: message.into(),
        }
    }

    fn at(origin: &str, src: &str, span: Option<Range<usize>>, message: impl Into<String>) -> Self {
        let mut e = ConfigError::new(origin, message);
        if let Some(span) = span {
            let offset = span.start.min(src.len());
            let before = &src[..offset];
            e.line = Some(before.matches('\n').count() + 1);
            e.column = Some(offset - before.rfind('\n').map_or(0, |i| i + 1) + 1);
        }
        e
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{}:{}:{}: {}", self.origin, l, c, self.message),
            _ => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type S<T> = Option<Spanned<T>>;

fn sp<T>(v: T) -> S<T> {
    Some(Spanned::new(0..0, v))
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub name: S<String>,
    pub duration_s: S<f64>,
    pub seed: S<i64>,
    pub protocol: S<String>,
    pub sampling_interval_ms: S<f64>,
    pub output_dir: Option<String>,
    pub event_log: Option<bool>,
    pub rbis: Option<RawRbis>,
    pub gnb: Option<RawGnb>,
    pub ptp: Option<RawPtp>,
    pub analysis: Option<RawAnalysis>,
    #[serde(default)]
    pub ue: Vec<Spanned<RawUe>>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawRbis {
    pub correction_mode: S<String>,
    pub literal_init: Option<bool>,
    pub follow_up_delay_min_ms: S<f64>,
    pub follow_up_delay_max_ms: S<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawGnb {
    pub ssb_period_ms: S<i64>,
    pub mu: S<i64>,
    pub t_off_ps: S<i64>,
    pub toa_jitter_sigma_ps: S<f64>,
    pub ta_update_interval_ms: S<i64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawPtp {
    pub sync_interval_ms: S<f64>,
    pub turnaround_us: S<f64>,
    pub downlink_delay_us: S<f64>,
    pub uplink_delay_us: S<f64>,
    pub downlink_jitter_sigma_ps: S<f64>,
    pub uplink_jitter_sigma_ps: S<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawAnalysis {
    pub outlier_bound_ps: S<i64>,
    pub bin_width_ps: S<i64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawUe {
    pub name: S<String>,
    pub role: S<String>,
    pub distance_m: S<f64>,
    /// `[[time_s, distance_m], ...]`, starting at time 0.
    pub distance_steps: S<Vec<(f64, f64)>>,
    pub clock: Option<RawClock>,
    pub timestamp: Option<RawTimestamp>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawClock {
    pub rate_ppm: S<f64>,
    pub offset_init_ps: S<i64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawTimestamp {
    pub jitter_sigma_ps: S<f64>,
    pub jitter_dist: S<String>,
    pub outlier_prob: S<f64>,
    pub outlier_magnitude_ps: S<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Rbis,
    Ptp,
    Both,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Rbis => "rbis",
            Protocol::Ptp => "ptp",
            Protocol::Both => "both",
        }
    }

    pub fn runs_rbis(self) -> bool {
        matches!(self, Protocol::Rbis | Protocol::Both)
    }

    pub fn runs_ptp(self) -> bool {
        matches!(self, Protocol::Ptp | Protocol::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistanceSpec {
    Constant(f64),
    /// `(from_s, distance_m)` pairs.
    Steps(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeSpec {
    pub name: String,
    pub role: Role,
    pub distance: DistanceSpec,
    pub rate_ppm: f64,
    pub offset_init_ps: i64,
    pub timestamp: TimestampModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtpSettings {
    pub sync_interval_ms: f64,
    pub turnaround_us: f64,
    pub downlink_delay_us: f64,
    pub uplink_delay_us: f64,
    pub downlink_jitter_sigma_ps: f64,
    pub uplink_jitter_sigma_ps: f64,
}

impl Default for PtpSettings {
    fn default() -> Self {
        PtpSettings {
            sync_interval_ms: 125.0,
            turnaround_us: 1_000.0,
            downlink_delay_us: 500.0,
            uplink_delay_us: 500.0,
            downlink_jitter_sigma_ps: 0.0,
            uplink_jitter_sigma_ps: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisSettings {
    pub outlier_bound_ps: i64,
    pub bin_width_ps: i64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            outlier_bound_ps: DEFAULT_OUTLIER_BOUND_PS,
            bin_width_ps: PS_PER_US as i64,
        }
    }
}

/// A validated scenario, in the units used by the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    pub seed: u64,
    pub protocol: Protocol,
    /// Zero samples once per correction round instead of on a fixed grid.
    pub sampling_interval_ms: f64,
    pub output_dir: Option<String>,
    pub event_log: bool,
    pub mode: CorrectionMode,
    pub literal_init: bool,
    pub follow_up_delay_ms: (f64, f64),
    pub gnb: GnbConfig,
    pub ptp: PtpSettings,
    pub analysis: AnalysisSettings,
    pub ues: Vec<UeSpec>,
}

fn ms_to_ps(ms: f64) -> u64 {
    (ms * PS_PER_MS as f64).round() as u64
}

fn us_to_ps(us: f64) -> u64 {
    (us * PS_PER_US as f64).round() as u64
}

impl Scenario {
    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    pub fn sampling(&self) -> Sampling {
        if self.sampling_interval_ms == 0.0 {
            Sampling::PerRound
        } else {
            Sampling::Periodic {
                interval_ps: ms_to_ps(self.sampling_interval_ms),
            }
        }
    }

    pub fn master(&self) -> &UeSpec {
        self.ues
            .iter()
            .find(|u| u.role == Role::Master)
            .expect("validated scenario has a master")
    }

    pub fn slaves(&self) -> impl Iterator<Item = &UeSpec> {
        self.ues.iter().filter(|u| u.role == Role::Slave)
    }

    pub fn rbis_config(&self) -> Result<RbisConfig, ConfigError> {
        let invalid = |e: rbis_core::ValidationError| ConfigError::new(&self.name, e.to_string());
        let ues = self
            .ues
            .iter()
            .map(|u| {
                let distance = match &u.distance {
                    DistanceSpec::Constant(d) => DistanceProfile::constant(*d),
                    DistanceSpec::Steps(steps) => {
                        DistanceProfile::steps(steps.iter().map(|(t, d)| (SimTime::from_secs_f64(*t), *d)).collect())
                    }
                }
                .map_err(invalid)?;
                Ok(UeSetup {
                    name: u.name.clone(),
                    role: u.role,
                    distance,
                    clock: ClockState::new(u.rate_ppm, u.offset_init_ps).map_err(invalid)?,
                    timestamp: u.timestamp,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let cfg = RbisConfig {
            scenario: self.name.clone(),
            seed: self.seed,
            duration: self.duration(),
            gnb: self.gnb,
            ues,
            mode: self.mode,
            literal_init: self.literal_init,
            follow_up_delay_ps: (ms_to_ps(self.follow_up_delay_ms.0), ms_to_ps(self.follow_up_delay_ms.1)),
            sampling: self.sampling(),
            event_log: self.event_log,
        };
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    /// One two-way session per slave against the master's clock. Each session
    /// gets its own sub-seed; the trace metadata keeps the scenario seed.
    pub fn ptp_configs(&self) -> Result<Vec<(String, PtpConfig)>, ConfigError> {
        let invalid = |e: rbis_core::ValidationError| ConfigError::new(&self.name, e.to_string());
        let master = self.master();
        let master_clock = ClockState::new(master.rate_ppm, master.offset_init_ps).map_err(invalid)?;
        let interval = ms_to_ps(self.ptp.sync_interval_ms);
        let rounds = self.duration().as_ps() / interval;
        self.slaves()
            .enumerate()
            .map(|(i, s)| {
                let cfg = PtpConfig {
                    scenario: self.name.clone(),
                    seed: derive_seed(self.seed, i as u64),
                    rounds,
                    sync_interval_ps: interval,
                    turnaround_ps: us_to_ps(self.ptp.turnaround_us),
                    link: PtpLink {
                        downlink: LinkDirection {
                            delay_ps: us_to_ps(self.ptp.downlink_delay_us),
                            jitter_sigma_ps: self.ptp.downlink_jitter_sigma_ps,
                        },
                        uplink: LinkDirection {
                            delay_ps: us_to_ps(self.ptp.uplink_delay_us),
                            jitter_sigma_ps: self.ptp.uplink_jitter_sigma_ps,
                        },
                    },
                    master_clock,
                    slave_clock: ClockState::new(s.rate_ppm, s.offset_init_ps).map_err(invalid)?,
                    master_timestamp: master.timestamp,
                    slave_timestamp: s.timestamp,
                    apply_corrections: true,
                    sampling: self.sampling(),
                    event_log: self.event_log,
                };
                cfg.validate().map_err(invalid)?;
                Ok((s.name.clone(), cfg))
            })
            .collect()
    }

    /// Fully explicit raw form; parsing its TOML rendering gives back `self`.
    pub fn to_raw(&self) -> RawConfig {
        let ues = self
            .ues
            .iter()
            .map(|u| {
                let (distance_m, distance_steps) = match &u.distance {
                    DistanceSpec::Constant(d) => (sp(*d), None),
                    DistanceSpec::Steps(s) => (None, sp(s.clone())),
                };
                Spanned::new(
                    0..0,
                    RawUe {
                        name: sp(u.name.clone()),
                        role: sp(match u.role {
                            Role::Master => "master".to_string(),
                            Role::Slave => "slave".to_string(),
                        }),
                        distance_m,
                        distance_steps,
                        clock: Some(RawClock {
                            rate_ppm: sp(u.rate_ppm),
                            offset_init_ps: sp(u.offset_init_ps),
                        }),
                        timestamp: Some(RawTimestamp {
                            jitter_sigma_ps: sp(u.timestamp.jitter_sigma_ps),
                            jitter_dist: sp(u.timestamp.jitter_dist.to_string()),
                            outlier_prob: sp(u.timestamp.outlier_prob),
                            outlier_magnitude_ps: sp(u.timestamp.outlier_magnitude_ps),
                        }),
                    },
                )
            })
            .collect();
        RawConfig {
            name: sp(self.name.clone()),
            duration_s: sp(self.duration_s),
            seed: sp(self.seed as i64),
            protocol: sp(self.protocol.as_str().to_string()),
            sampling_interval_ms: sp(self.sampling_interval_ms),
            output_dir: self.output_dir.clone(),
            event_log: Some(self.event_log),
            rbis: Some(RawRbis {
                correction_mode: sp(self.mode.to_string()),
                literal_init: Some(self.literal_init),
                follow_up_delay_min_ms: sp(self.follow_up_delay_ms.0),
                follow_up_delay_max_ms: sp(self.follow_up_delay_ms.1),
            }),
            gnb: Some(RawGnb {
                ssb_period_ms: sp(self.gnb.ssb_period_ms as i64),
                mu: sp(self.gnb.numerology.mu() as i64),
                t_off_ps: sp(self.gnb.t_off_ps),
                toa_jitter_sigma_ps: sp(self.gnb.toa_jitter_sigma_ps),
                ta_update_interval_ms: sp(self.gnb.ta_update_interval_ms as i64),
            }),
            ptp: Some(RawPtp {
                sync_interval_ms: sp(self.ptp.sync_interval_ms),
                turnaround_us: sp(self.ptp.turnaround_us),
                downlink_delay_us: sp(self.ptp.downlink_delay_us),
                uplink_delay_us: sp(self.ptp.uplink_delay_us),
                downlink_jitter_sigma_ps: sp(self.ptp.downlink_jitter_sigma_ps),
                uplink_jitter_sigma_ps: sp(self.ptp.uplink_jitter_sigma_ps),
            }),
            analysis: Some(RawAnalysis {
                outlier_bound_ps: sp(self.analysis.outlier_bound_ps),
                bin_width_ps: sp(self.analysis.bin_width_ps),
            }),
            ue: ues,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("scenario serializes")
    }
}

struct Problem {
    span: Option<Range<usize>>,
    message: String,
}

type Check<T> = Result<T, Problem>;

fn problem(span: Option<Range<usize>>, message: impl Into<String>) -> Problem {
    Problem {
        span,
        message: message.into(),
    }
}

fn value<T: Clone>(field: &S<T>, default: T) -> (T, Option<Range<usize>>) {
    match field {
        Some(s) => (s.get_ref().clone(), Some(s.span())),
        None => (default, None),
    }
}

fn number<T: Clone + Into<f64>>(field: &S<T>, key: &str, default: T, ok: impl Fn(f64) -> bool, rule: &str) -> Check<T> {
    let (v, span) = value(field, default);
    let x: f64 = v.clone().into();
    if x.is_finite() && ok(x) {
        Ok(v)
    } else {
        Err(problem(span, format!("{key} = {x} {rule}")))
    }
}

fn int(field: &S<i64>, key: &str, default: i64, min: i64, max: i64) -> Check<i64> {
    let (v, span) = value(field, default);
    if (min..=max).contains(&v) {
        Ok(v)
    } else if max == i64::MAX {
        Err(problem(span, format!("{key} = {v} must be at least {min}")))
    } else {
        Err(problem(span, format!("{key} = {v} must be in [{min}, {max}]")))
    }
}

fn parsed<T: std::str::FromStr>(field: &S<String>, key: &str, default: &str) -> Check<T>
where
    T::Err: fmt::Display,
{
    let (v, span) = value(field, default.to_string());
    v.parse::<T>().map_err(|e| problem(span, format!("{key}: {e}")))
}

fn is_safe_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn resolve_ue(raw: &Spanned<RawUe>, index: usize) -> Check<UeSpec> {
    let table = Some(raw.span());
    let u = raw.get_ref();
    let (name, name_span) = value(&u.name, format!("ue{index}"));
    if !is_safe_name(&name) {
        return Err(problem(
            name_span.or(table.clone()),
            format!("ue name '{name}' may only contain letters, digits, '_' and '-'"),
        ));
    }
    let (role, role_span) = value(&u.role, String::new());
    let role = match role.as_str() {
        "master" => Role::Master,
        "slave" => Role::Slave,
        "" => return Err(problem(table, format!("ue '{name}' is missing role (master or slave)"))),
        other => return Err(problem(role_span, format!("role '{other}' must be master or slave"))),
    };
    let distance = match (&u.distance_m, &u.distance_steps) {
        (Some(_), Some(s)) => {
            return Err(problem(
                Some(s.span()),
                "give either distance_m or distance_steps, not both",
            ))
        }
        (Some(_), None) => DistanceSpec::Constant(number(
            &u.distance_m,
            "distance_m",
            0.0,
            |x| x >= 0.0,
            "must be non-negative",
        )?),
        (None, Some(s)) => {
            let steps = s.get_ref().clone();
            DistanceProfile::steps(
                steps
                    .iter()
                    .map(|(t, d)| (SimTime::from_secs_f64(t.max(0.0)), *d))
                    .collect(),
            )
            .map_err(|e| problem(Some(s.span()), format!("distance_steps: {e}")))?;
            if steps.iter().any(|(t, _)| !t.is_finite() || *t < 0.0) {
                return Err(problem(
                    Some(s.span()),
                    "distance_steps times must be non-negative seconds",
                ));
            }
            DistanceSpec::Steps(steps)
        }
        (None, None) => {
            return Err(problem(
                table,
                format!("ue '{name}' needs distance_m or distance_steps"),
            ))
        }
    };
    let clock = u.clock.clone().unwrap_or_default();
    let rate_ppm = number(
        &clock.rate_ppm,
        "clock.rate_ppm",
        0.0,
        |x| x.abs() <= MAX_DRIFT_PPM,
        &format!("must be within ±{MAX_DRIFT_PPM} ppm"),
    )?;
    let (offset_init_ps, _) = value(&clock.offset_init_ps, 0);
    let ts = u.timestamp.clone().unwrap_or_default();
    let jitter_sigma_ps = number(
        &ts.jitter_sigma_ps,
        "timestamp.jitter_sigma_ps",
        0.0,
        |x| x >= 0.0,
        "must be non-negative",
    )?;
    let default_dist = if jitter_sigma_ps > 0.0 { "gaussian" } else { "none" };
    let timestamp = TimestampModel {
        jitter_sigma_ps,
        jitter_dist: parsed::<JitterDist>(&ts.jitter_dist, "timestamp.jitter_dist", default_dist)?,
        outlier_prob: number(
            &ts.outlier_prob,
            "timestamp.outlier_prob",
            0.0,
            |x| (0.0..=1.0).contains(&x),
            "must be in [0, 1]",
        )?,
        outlier_magnitude_ps: int(
            &ts.outlier_magnitude_ps,
            "timestamp.outlier_magnitude_ps",
            0,
            0,
            i64::MAX,
        )?,
    };
    Ok(UeSpec {
        name,
        role,
        distance,
        rate_ppm,
        offset_init_ps,
        timestamp,
    })
}

fn resolve(raw: &RawConfig) -> Check<Scenario> {
    let (name, name_span) = value(&raw.name, "scenario".to_string());
    if !is_safe_name(&name) {
        return Err(problem(
            name_span,
            format!("name '{name}' may only contain letters, digits, '_' and '-'"),
        ));
    }
    let duration_s = number(
        &raw.duration_s,
        "duration_s",
        60.0,
        |x| x > 0.0 && x <= 1e6,
        "must be in (0, 1e6] seconds",
    )?;
    let seed = int(&raw.seed, "seed", 1, 0, i64::MAX)? as u64;
    let (protocol, protocol_span) = value(&raw.protocol, "rbis".to_string());
    let protocol = match protocol.as_str() {
        "rbis" => Protocol::Rbis,
        "ptp" => Protocol::Ptp,
        "both" => Protocol::Both,
        other => {
            return Err(problem(
                protocol_span,
                format!("protocol '{other}' must be rbis, ptp or both"),
            ))
        }
    };
    let sampling_interval_ms = number(
        &raw.sampling_interval_ms,
        "sampling_interval_ms",
        0.0,
        |x| x >= 0.0,
        "must be non-negative (0 samples every round)",
    )?;

    let rbis = raw.rbis.clone().unwrap_or_default();
    let mode = parsed::<CorrectionMode>(&rbis.correction_mode, "rbis.correction_mode", "paper_full")?;
    let fu_min = number(
        &rbis.follow_up_delay_min_ms,
        "rbis.follow_up_delay_min_ms",
        1.0,
        |x| x >= 0.0,
        "must be non-negative",
    )?;
    let fu_max = number(
        &rbis.follow_up_delay_max_ms,
        "rbis.follow_up_delay_max_ms",
        5.0,
        |x| x >= fu_min,
        "must not be below rbis.follow_up_delay_min_ms",
    )?;

    let g = raw.gnb.clone().unwrap_or_default();
    let defaults = GnbConfig::default();
    let (period, period_span) = value(&g.ssb_period_ms, defaults.ssb_period_ms as i64);
    if !SSB_PERIODS_MS.contains(&(period as u32)) || period < 0 {
        return Err(problem(
            period_span,
            format!("gnb.ssb_period_ms = {period} must be one of 5, 10, 20, 40, 80, 160"),
        ));
    }
    let mu = int(&g.mu, "gnb.mu", defaults.numerology.mu() as i64, 0, 3)?;
    let gnb = GnbConfig {
        ssb_period_ms: period as u32,
        numerology: Numerology::new(mu as u8).expect("range checked"),
        t_off_ps: int(&g.t_off_ps, "gnb.t_off_ps", defaults.t_off_ps, 0, i64::MAX)?,
        toa_jitter_sigma_ps: number(
            &g.toa_jitter_sigma_ps,
            "gnb.toa_jitter_sigma_ps",
            0.0,
            |x| x >= 0.0,
            "must be non-negative",
        )?,
        ta_update_interval_ms: int(
            &g.ta_update_interval_ms,
            "gnb.ta_update_interval_ms",
            defaults.ta_update_interval_ms as i64,
            1,
            i64::MAX,
        )? as u64,
    };

    let p = raw.ptp.clone().unwrap_or_default();
    let pd = PtpSettings::default();
    let nonneg = |x: f64| x >= 0.0;
    let ptp = PtpSettings {
        sync_interval_ms: number(
            &p.sync_interval_ms,
            "ptp.sync_interval_ms",
            pd.sync_interval_ms,
            |x| x > 0.0,
            "must be positive",
        )?,
        turnaround_us: number(
            &p.turnaround_us,
            "ptp.turnaround_us",
            pd.turnaround_us,
            nonneg,
            "must be non-negative",
        )?,
        downlink_delay_us: number(
            &p.downlink_delay_us,
            "ptp.downlink_delay_us",
            pd.downlink_delay_us,
            nonneg,
            "must be non-negative",
        )?,
        uplink_delay_us: number(
            &p.uplink_delay_us,
            "ptp.uplink_delay_us",
            pd.uplink_delay_us,
            nonneg,
            "must be non-negative",
        )?,
        downlink_jitter_sigma_ps: number(
            &p.downlink_jitter_sigma_ps,
            "ptp.downlink_jitter_sigma_ps",
            0.0,
            nonneg,
            "must be non-negative",
        )?,
        uplink_jitter_sigma_ps: number(
            &p.uplink_jitter_sigma_ps,
            "ptp.uplink_jitter_sigma_ps",
            0.0,
            nonneg,
            "must be non-negative",
        )?,
    };
    if protocol.runs_ptp() {
        let exchange = ptp.downlink_delay_us + ptp.turnaround_us + ptp.uplink_delay_us;
        if exchange * 1e-3 >= ptp.sync_interval_ms {
            return Err(problem(
                p.sync_interval_ms.as_ref().map(|s| s.span()),
                format!(
                    "ptp.sync_interval_ms = {} is shorter than one exchange ({exchange} µs)",
                    ptp.sync_interval_ms
                ),
            ));
        }
        if ptp.sync_interval_ms * 1e-3 > duration_s {
            return Err(problem(
                p.sync_interval_ms.as_ref().map(|s| s.span()),
                "ptp.sync_interval_ms leaves no complete round within duration_s",
            ));
        }
    }

    let a = raw.analysis.clone().unwrap_or_default();
    let ad = AnalysisSettings::default();
    let analysis = AnalysisSettings {
        outlier_bound_ps: int(
            &a.outlier_bound_ps,
            "analysis.outlier_bound_ps",
            ad.outlier_bound_ps,
            1,
            i64::MAX,
        )?,
        bin_width_ps: int(&a.bin_width_ps, "analysis.bin_width_ps", ad.bin_width_ps, 1, i64::MAX)?,
    };

    let ues = raw
        .ue
        .iter()
        .enumerate()
        .map(|(i, u)| resolve_ue(u, i))
        .collect::<Check<Vec<_>>>()?;
    let first_ue = raw.ue.first().map(|u| u.span());
    let masters: Vec<usize> = (0..ues.len()).filter(|i| ues[*i].role == Role::Master).collect();
    if masters.len() != 1 {
        let span = masters.get(1).map(|i| raw.ue[*i].span()).or(first_ue);
        return Err(problem(
            span,
            format!("exactly one master ue is required, found {}", masters.len()),
        ));
    }
    if ues.len() < 2 {
        return Err(problem(first_ue, "at least one slave ue is required"));
    }
    for (i, u) in ues.iter().enumerate() {
        if ues[..i].iter().any(|o| o.name == u.name) {
            return Err(problem(
                Some(raw.ue[i].span()),
                format!("duplicate ue name '{}'", u.name),
            ));
        }
    }

    Ok(Scenario {
        name,
        duration_s,
        seed,
        protocol,
        sampling_interval_ms,
        output_dir: raw.output_dir.clone(),
        event_log: raw.event_log.unwrap_or(false),
        mode,
        literal_init: rbis.literal_init.unwrap_or(false),
        follow_up_delay_ms: (fu_min, fu_max),
        gnb,
        ptp,
        analysis,
        ues,
    })
}

/// Parse and validate scenario text. `origin` names the source in diagnostics.
pub fn parse_scenario(src: &str, origin: &str) -> Result<Scenario, ConfigError> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| ConfigError::at(origin, src, e.span(), e.message()))?;
    let scenario = resolve(&raw).map_err(|p| ConfigError::at(origin, src, p.span, p.message))?;
    if scenario.protocol.runs_rbis() {
        scenario.rbis_config().map_err(|e| ConfigError {
            origin: origin.into(),
            ..e
        })?;
    }
    if scenario.protocol.runs_ptp() {
        scenario.ptp_configs().map_err(|e| ConfigError {
            origin: origin.into(),
            ..e
        })?;
    }
    Ok(scenario)
}

pub fn load_scenario(path: &std::path::Path) -> Result<Scenario, ConfigError> {
    let origin = path.display().to_string();
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError::new(&origin, format!("cannot read: {e}")))?;
    if is_manifest(&src) {
        return scenario_from_manifest(&src, &origin);
    }
    parse_scenario(&src, &origin)
}

/// A run manifest has `tool` and `[config]` at the top level.
fn is_manifest(src: &str) -> bool {
    toml::from_str::<toml::Table>(src).is_ok_and(|t| t.contains_key("tool") && t.contains_key("config"))
}

/// Recover the scenario echoed under `[config]` in a run manifest.
pub fn scenario_from_manifest(manifest: &str, origin: &str) -> Result<Scenario, ConfigError> {
    let table: toml::Table =
        toml::from_str(manifest).map_err(|e| ConfigError::at(origin, manifest, e.span(), e.message()))?;
    let config = table
        .get("config")
        .ok_or_else(|| ConfigError::new(origin, "manifest has no [config] table"))?;
    let text = toml::to_string(config).map_err(|e| ConfigError::new(origin, e.to_string()))?;
    parse_scenario(&text, origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rbis_core::sim::PS_PER_S;

    const MINIMAL: &str = r#"
name = "minimal"
duration_s = 60
seed = 7
sampling_interval_ms = 100

[[ue]]
name = "ref"
role = "master"
distance_m = 100

[[ue]]
name = "dut"
role = "slave"
distance_m = 100
clock.rate_ppm = 2.5
clock.offset_init_ps = 3000000
"#;

    #[test]
    fn minimal_scenario_defaults() {
        let s = parse_scenario(MINIMAL, "minimal.toml").unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.protocol, Protocol::Rbis);
        assert_eq!(s.mode, CorrectionMode::PaperFull);
        assert_eq!(s.gnb, GnbConfig::default());
        assert_eq!(s.follow_up_delay_ms, (1.0, 5.0));
        assert_eq!(
            s.sampling(),
            Sampling::Periodic {
                interval_ps: 100 * PS_PER_MS
            }
        );
        assert_eq!(s.ues[1].rate_ppm, 2.5);
        assert_eq!(s.ues[1].offset_init_ps, 3_000_000);
        assert_eq!(s.duration().as_ps(), 60 * PS_PER_S);
    }

    #[test]
    fn dotted_keys_and_tables_are_equivalent() {
        let dotted = MINIMAL.replace("seed = 7", "seed = 7\ngnb.ssb_period_ms = 40\ngnb.mu = 2");
        let tabled = format!("{MINIMAL}\n[gnb]\nssb_period_ms = 40\nmu = 2\n");
        let a = parse_scenario(&dotted, "a").unwrap();
        let b = parse_scenario(&tabled, "b").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.gnb.ssb_period_ms, 40);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut s = parse_scenario(MINIMAL, "m").unwrap();
        s.ues[0].distance = DistanceSpec::Steps(vec![(0.0, 10.0), (2.5, 40.0)]);
        s.ues[1].timestamp = TimestampModel::gaussian(2_000.0);
        s.output_dir = Some("out/x".into());
        let text = s.to_toml();
        assert_eq!(parse_scenario(&text, "echo").unwrap(), s);
    }

    fn error_of(src: &str) -> ConfigError {
        parse_scenario(src, "bad.toml").unwrap_err()
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let e = error_of(&MINIMAL.replace("clock.rate_ppm = 2.5", "clock.rate_ppm = 900"));
        assert_eq!(e.line, Some(16));
        assert!(e.message.contains("clock.rate_ppm"), "{e}");
        assert!(e.to_string().starts_with("bad.toml:16:"));

        let e = error_of(&MINIMAL.replace("seed = 7", "seed = 7\ngnb.ssb_period_ms = 30"));
        assert_eq!(e.line, Some(5));
        assert!(e.message.contains("one of 5, 10, 20"));

        let e = error_of(&MINIMAL.replace("role = \"slave\"", "role = \"observer\""));
        assert_eq!(e.line, Some(14));
    }

    #[test]
    fn syntax_and_unknown_keys_are_anchored() {
        let e = error_of(&MINIMAL.replace("seed = 7", "seed = 7\ngnb.ssb_perod_ms = 20"));
        assert_eq!(e.line, Some(5));
        assert!(e.message.contains("ssb_perod_ms"));
        let e = error_of(&MINIMAL.replace("duration_s = 60", "duration_s = = 60"));
        assert_eq!(e.line, Some(3));
        let e = error_of(&MINIMAL.replace("duration_s = 60", "duration_s = \"long\""));
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn topology_rules() {
        let two_masters = MINIMAL.replace("role = \"slave\"", "role = \"master\"");
        let e = error_of(&two_masters);
        assert!(e.message.contains("exactly one master"));
        assert_eq!(e.line, Some(12));
        let no_slave = MINIMAL.split("[[ue]]\nname = \"dut\"").next().unwrap().to_string();
        assert!(error_of(&no_slave).message.contains("slave"));
        let dup = MINIMAL.replace("name = \"dut\"", "name = \"ref\"");
        assert!(error_of(&dup).message.contains("duplicate"));
        let both = MINIMAL.replace(
            "distance_m = 100\nclock",
            "distance_m = 100\ndistance_steps = [[0, 1]]\nclock",
        );
        assert!(error_of(&both).message.contains("not both"));
        assert!(error_of(&MINIMAL.replace("duration_s = 60", "duration_s = 0"))
            .message
            .contains("duration_s"));
    }

    #[test]
    fn ptp_settings_validated_only_when_used() {
        let tight = MINIMAL.replace("seed = 7", "seed = 7\nptp.sync_interval_ms = 1");
        assert!(parse_scenario(&tight, "t").is_ok());
        let e = error_of(&tight.replace("seed = 7", "seed = 7\nprotocol = \"both\""));
        assert!(e.message.contains("ptp.sync_interval_ms"));
    }
}
