//! Free-running local clocks with timestamping noise.
//!
//! A clock reads `C(t) = a·t + b` where `a = 1 + drift` and `b` is the offset.
//! Drift is held as an integer parts-per-trillion factor so readings are exact
//! integer arithmetic. Corrections are offset steps; the rate never changes.

use std::fmt;
use std::str::FromStr;

use crate::error::ValidationError;
use crate::sim::{RngStream, SimTime};

/// Configuration sanity bound on |a − 1|.
pub const MAX_DRIFT_PPM: f64 = 500.0;

const PPT_PER_PPM: f64 = 1e6;
const PPT_DENOM: i128 = 1_000_000_000_000;

/// Round-half-away-from-zero integer division.
pub(crate) fn div_round(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    if num >= 0 {
        (num + den / 2) / den
    } else {
        -((-num + den / 2) / den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClockState {
    drift_ppt: i64,
    offset_ps: i64,
    last_step_at: Option<SimTime>,
}

impl Default for ClockState {
    fn default() -> Self {
        ClockState::ideal()
    }
}

impl ClockState {
    pub const fn ideal() -> Self {
        ClockState {
            drift_ppt: 0,
            offset_ps: 0,
            last_step_at: None,
        }
    }

    /// `rate_ppm` is the deviation of `a` from 1 in parts per million.
    pub fn new(rate_ppm: f64, offset_ps: i64) -> Result<Self, ValidationError> {
        ValidationError::check_range("rate_ppm", rate_ppm, -MAX_DRIFT_PPM, MAX_DRIFT_PPM)?;
        Ok(ClockState {
            drift_ppt: (rate_ppm * PPT_PER_PPM).round() as i64,
            offset_ps,
            last_step_at: None,
        })
    }

    pub fn rate_ppm(&self) -> f64 {
        self.drift_ppt as f64 / PPT_PER_PPM
    }

    pub fn offset_ps(&self) -> i64 {
        self.offset_ps
    }

    pub fn last_step_at(&self) -> Option<SimTime> {
        self.last_step_at
    }

    /// Noise-free reading `a·t + b`, rounded to the nearest picosecond.
    pub fn ideal_reading(&self, true_time: SimTime) -> i64 {
        let t = true_time.as_ps() as i128;
        let drift = div_round(t * self.drift_ppt as i128, PPT_DENOM);
        (t + drift + self.offset_ps as i128) as i64
    }

    /// Local timestamp including timestamping noise drawn from `rng`.
    pub fn read(&self, model: &TimestampModel, true_time: SimTime, rng: &mut RngStream) -> i64 {
        self.ideal_reading(true_time) + model.sample_error(rng)
    }

    /// Step the offset by `delta` picoseconds. The rate is left untouched.
    pub fn step(&mut self, delta_ps: i64, at: SimTime) {
        self.offset_ps += delta_ps;
        self.last_step_at = Some(at);
    }
}

/// Ground-truth `C_R(t) − C_S(t)` without timestamp noise.
pub fn true_offset(master: &ClockState, slave: &ClockState, true_time: SimTime) -> i64 {
    master.ideal_reading(true_time) - slave.ideal_reading(true_time)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JitterDist {
    #[default]
    None,
    Gaussian,
    /// Uniform with the configured standard deviation, i.e. half-width √3·σ.
    Uniform,
}

impl FromStr for JitterDist {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(JitterDist::None),
            "gaussian" => Ok(JitterDist::Gaussian),
            "uniform" => Ok(JitterDist::Uniform),
            other => Err(ValidationError::Invalid(format!(
                "unknown jitter distribution '{other}' (expected none, gaussian or uniform)"
            ))),
        }
    }
}

impl fmt::Display for JitterDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JitterDist::None => "none",
            JitterDist::Gaussian => "gaussian",
            JitterDist::Uniform => "uniform",
        })
    }
}

/// Timestamping noise: i.i.d. jitter plus rare fixed-magnitude excursions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimestampModel {
    pub jitter_sigma_ps: f64,
    pub jitter_dist: JitterDist,
    pub outlier_prob: f64,
    pub outlier_magnitude_ps: i64,
}

impl TimestampModel {
    pub fn noiseless() -> Self {
        TimestampModel::default()
    }

    pub fn gaussian(sigma_ps: f64) -> Self {
        TimestampModel {
            jitter_sigma_ps: sigma_ps,
            jitter_dist: JitterDist::Gaussian,
            ..TimestampModel::default()
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        ValidationError::check_range("jitter_sigma_ps", self.jitter_sigma_ps, 0.0, f64::MAX)?;
        ValidationError::check_range("outlier_prob", self.outlier_prob, 0.0, 1.0)?;
        if self.outlier_magnitude_ps < 0 {
            return Err(ValidationError::Invalid(format!(
                "outlier_magnitude_ps must be non-negative, got {}",
                self.outlier_magnitude_ps
            )));
        }
        Ok(())
    }

    /// One draw of the timestamp error in picoseconds.
    pub fn sample_error(&self, rng: &mut RngStream) -> i64 {
        let sigma = self.jitter_sigma_ps;
        let jitter = match self.jitter_dist {
            JitterDist::None => 0.0,
            _ if sigma == 0.0 => 0.0,
            JitterDist::Gaussian => rng.gaussian(sigma),
            JitterDist::Uniform => {
                let half = 3f64.sqrt() * sigma;
                rng.uniform(-half, half)
            }
        };
        let mut err = jitter.round() as i64;
        if self.outlier_prob > 0.0 && rng.chance(self.outlier_prob) {
            err += if rng.coin() {
                self.outlier_magnitude_ps
            } else {
                -self.outlier_magnitude_ps
            };
        }
        err
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::PS_PER_US;
    use proptest::prelude::*;

    const S: u64 = 1_000_000_000_000;

    #[test]
    fn identity_clock_reads_true_time() {
        let c = ClockState::ideal();
        let mut rng = RngStream::new(1, 1);
        let t = SimTime::from_secs(10);
        assert_eq!(c.read(&TimestampModel::noiseless(), t, &mut rng), 10 * S as i64);
    }

    #[test]
    fn fifty_ppm_after_one_second() {
        let c = ClockState::new(50.0, 0).unwrap();
        // 1 s · (1 + 50e-6) = 1.000050 s
        assert_eq!(c.ideal_reading(SimTime::from_secs(1)), 1_000_050_000_000);
    }

    #[test]
    fn pure_offset() {
        let c = ClockState::new(0.0, -3 * PS_PER_US as i64).unwrap();
        assert_eq!(c.ideal_reading(SimTime::from_secs(5)), 5 * S as i64 - 3_000_000);
    }

    #[test]
    fn rate_sanity_bound() {
        assert!(ClockState::new(500.0, 0).is_ok());
        assert!(ClockState::new(-500.1, 0).is_err());
        assert!(ClockState::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn steps_add_and_cancel() {
        let mut c = ClockState::ideal();
        c.step(1_000_000, SimTime::from_ms(1));
        assert_eq!(c.offset_ps(), 1_000_000);
        assert_eq!(c.last_step_at(), Some(SimTime::from_ms(1)));
        c.step(-1_000_000, SimTime::from_ms(2));
        assert_eq!(c.offset_ps(), 0);
        assert_eq!(c.rate_ppm(), 0.0);
    }

    #[test]
    fn step_shifts_later_reads_by_delta() {
        let mut c = ClockState::new(12.5, 777).unwrap();
        let t = SimTime::from_ms(1234);
        let before = c.ideal_reading(t);
        c.step(-4_321, SimTime::from_ms(1000));
        assert_eq!(c.ideal_reading(t), before - 4_321);
    }

    #[test]
    fn true_offset_cases() {
        let t = SimTime::from_secs(3);
        let a = ClockState::ideal();
        assert_eq!(true_offset(&a, &a, t), 0);
        let slave = ClockState::new(0.0, -2_000_000).unwrap();
        assert_eq!(true_offset(&a, &slave, t), 2_000_000);
        let fast = ClockState::new(10.0, 0).unwrap();
        assert_eq!(true_offset(&a, &fast, SimTime::from_secs(1)), -10_000_000);
        assert_eq!(true_offset(&a, &fast, SimTime::from_secs(2)), -20_000_000);
    }

    #[test]
    fn jitter_std_matches_configuration() {
        for dist in [JitterDist::Gaussian, JitterDist::Uniform] {
            let model = TimestampModel {
                jitter_sigma_ps: 2_000_000.0,
                jitter_dist: dist,
                ..Default::default()
            };
            let c = ClockState::new(3.0, 55).unwrap();
            let mut rng = RngStream::new(9, 4);
            let n = 20_000;
            let errs: Vec<f64> = (0..n)
                .map(|k| {
                    let t = SimTime::from_ms(k);
                    (c.read(&model, t, &mut rng) - c.ideal_reading(t)) as f64
                })
                .collect();
            let mean = errs.iter().sum::<f64>() / n as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let rel = (var.sqrt() - 2_000_000.0).abs() / 2_000_000.0;
            assert!(rel < 0.03, "{dist}: relative std error {rel}");
        }
    }

    #[test]
    fn outliers_have_configured_magnitude_and_rate() {
        let model = TimestampModel {
            outlier_prob: 0.01,
            outlier_magnitude_ps: 20_000_000,
            ..Default::default()
        };
        let mut rng = RngStream::new(5, 5);
        let errs: Vec<i64> = (0..100_000).map(|_| model.sample_error(&mut rng)).collect();
        assert!(errs.iter().all(|e| [0, 20_000_000, -20_000_000].contains(e)));
        let hits = errs.iter().filter(|e| **e != 0).count();
        // binomial(1e5, 0.01): mean 1000, sd ≈ 31.5
        assert!((hits as i64 - 1000).abs() < 130, "hits = {hits}");
        let pos = errs.iter().filter(|e| **e > 0).count();
        assert!(pos > 400 && pos < 600);
    }

    #[test]
    fn model_validation() {
        assert!(TimestampModel::gaussian(-1.0).validate().is_err());
        let bad = TimestampModel {
            outlier_prob: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(TimestampModel::gaussian(10.0).validate().is_ok());
    }

    proptest! {
        #[test]
        fn reading_is_affine(ppm in -500.0f64..500.0, b in -1_000_000_000i64..1_000_000_000,
                             t1 in 0u64..100 * S, dt in 0u64..10 * S) {
            let c = ClockState::new(ppm, b).unwrap();
            let t2 = t1 + dt;
            let lhs = c.ideal_reading(SimTime::from_ps(t2)) - c.ideal_reading(SimTime::from_ps(t1));
            let rhs = dt as f64 * (1.0 + c.rate_ppm() * 1e-6);
            // each reading rounds to the nearest picosecond
            prop_assert!((lhs as f64 - rhs).abs() <= 1.0 + rhs * 1e-15);
            prop_assert!(lhs >= 0);
        }

        #[test]
        fn step_commutes_with_elapsed_time(ppm in -500.0f64..500.0, delta in -1_000_000_000i64..1_000_000_000,
                                           t_step in 0u64..10 * S, dt in 0u64..10 * S) {
            let base = ClockState::new(ppm, 0).unwrap();
            let t_read = SimTime::from_ps(t_step + dt);
            let mut stepped = base;
            stepped.step(delta, SimTime::from_ps(t_step));
            prop_assert_eq!(stepped.ideal_reading(t_read), base.ideal_reading(t_read) + delta);
        }
    }
}
