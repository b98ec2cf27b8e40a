//! `sweep`: rerun a scenario once per value of a single parameter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use rbis_core::air::Numerology;
use rbis_core::analysis::format_us;
use rbis_core::clock::JitterDist;
use rbis_core::rbis::{CorrectionMode, Role};
use rbis_core::sim::derive_seed;

use crate::config::{ConfigError, DistanceSpec, Scenario, SSB_PERIODS_MS};
use crate::error::CliError;
use crate::run::{prepare_dir, simulate, write_artifacts, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Slave distance minus master distance, in metres.
    Distance,
    /// Timestamp jitter σ of every UE, in picoseconds.
    JitterSigma,
    Mu,
    SsbPeriod,
    CorrectionMode,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] = [
        SweepParam::Distance,
        SweepParam::JitterSigma,
        SweepParam::Mu,
        SweepParam::SsbPeriod,
        SweepParam::CorrectionMode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Distance => "distance",
            SweepParam::JitterSigma => "jitter_sigma",
            SweepParam::Mu => "mu",
            SweepParam::SsbPeriod => "ssb_period",
            SweepParam::CorrectionMode => "correction_mode",
        }
    }
}

impl FromStr for SweepParam {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepParam::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = SweepParam::ALL.iter().map(|p| p.as_str()).collect();
            ConfigError::new(
                "--param",
                format!("unknown sweep parameter '{s}' (sweepable: {})", names.join(", ")),
            )
        })
    }
}

fn bad_value(param: SweepParam, value: &str, why: &str) -> ConfigError {
    ConfigError::new("--values", format!("{} value '{value}' {why}", param.as_str()))
}

fn float(param: SweepParam, value: &str) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad_value(param, value, "is not a number"))
}

/// Copy of `base` with `param` set to `value` and the variant's sub-seed.
pub fn apply(base: &Scenario, param: SweepParam, value: &str, index: usize) -> Result<Scenario, ConfigError> {
    let mut s = base.clone();
    s.seed = derive_seed(base.seed, index as u64) & (i64::MAX as u64);
    s.name = format!("{}-{}-{}", base.name, param.as_str(), sanitize(value));
    s.output_dir = None;
    match param {
        SweepParam::Distance => {
            let ds = float(param, value)?;
            let DistanceSpec::Constant(master) = s.master().distance else {
                return Err(bad_value(param, value, "needs a constant master distance"));
            };
            if master + ds < 0.0 {
                return Err(bad_value(param, value, "puts a slave at negative distance"));
            }
            for u in s.ues.iter_mut().filter(|u| u.role == Role::Slave) {
                u.distance = DistanceSpec::Constant(master + ds);
            }
        }
        SweepParam::JitterSigma => {
            let sigma = float(param, value)?;
            if sigma < 0.0 {
                return Err(bad_value(param, value, "must be non-negative"));
            }
            for u in &mut s.ues {
                u.timestamp.jitter_sigma_ps = sigma;
                if u.timestamp.jitter_dist == JitterDist::None && sigma > 0.0 {
                    u.timestamp.jitter_dist = JitterDist::Gaussian;
                }
            }
        }
        SweepParam::Mu => {
            let mu = value
                .parse::<u8>()
                .ok()
                .and_then(|m| Numerology::new(m).ok())
                .ok_or_else(|| bad_value(param, value, "must be 0, 1, 2 or 3"))?;
            s.gnb.numerology = mu;
        }
        SweepParam::SsbPeriod => {
            let p = value
                .parse::<u32>()
                .ok()
                .filter(|p| SSB_PERIODS_MS.contains(p))
                .ok_or_else(|| bad_value(param, value, "must be one of 5, 10, 20, 40, 80, 160 ms"))?;
            s.gnb.ssb_period_ms = p;
        }
        SweepParam::CorrectionMode => {
            s.mode = value
                .parse::<CorrectionMode>()
                .map_err(|e| ConfigError::new("--values", e.to_string()))?;
        }
    }
    if s.protocol.runs_rbis() {
        s.rbis_config()?;
    }
    if s.protocol.runs_ptp() {
        s.ptp_configs()?;
    }
    Ok(s)
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct Variant {
    pub value: String,
    pub dir_name: String,
    pub output: RunOutput,
}

/// Build and simulate every variant. Variants run in parallel; the result
/// order follows `values`.
pub fn sweep(base: &Scenario, param: SweepParam, values: &[String]) -> Result<Vec<Variant>, CliError> {
    if values.is_empty() {
        return Err(ConfigError::new("--values", "sweep needs at least one value").into());
    }
    let scenarios = values
        .iter()
        .enumerate()
        .map(|(i, v)| apply(base, param, v, i))
        .collect::<Result<Vec<_>, _>>()?;
    scenarios
        .par_iter()
        .zip(values.par_iter())
        .map(|(s, v)| {
            Ok(Variant {
                value: v.clone(),
                dir_name: format!("{}_{}", param.as_str(), sanitize(v)),
                output: simulate(s)?,
            })
        })
        .collect()
}

pub fn summary_csv(param: SweepParam, variants: &[Variant]) -> String {
    let mut s = String::from(
        "parameter,value,seed,protocol,ue,samples,accuracy_ps,precision_ps,outlier_count,accuracy_us,precision_us\n",
    );
    let ps = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.3}"));
    let us = |v: Option<f64>| v.map_or(String::new(), format_us);
    for v in variants {
        for t in &v.output.traces {
            let m = &t.analysis.summary;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                param.as_str(),
                v.value,
                v.output.scenario.seed,
                t.protocol,
                t.ue,
                m.samples,
                ps(m.accuracy_ps),
                ps(m.precision_ps),
                m.outlier_count,
                us(m.accuracy_ps),
                us(m.precision_ps)
            );
        }
    }
    s
}

/// Write one artifact directory per variant plus `summary.csv`.
pub fn write_sweep(param: SweepParam, variants: &[Variant], dir: &Path, overwrite: bool) -> Result<(), CliError> {
    prepare_dir(dir, overwrite)?;
    variants.par_iter().try_for_each(|v| {
        let sub = dir.join(&v.dir_name);
        prepare_dir(&sub, overwrite)?;
        write_artifacts(&v.output, &sub).map(|_| ())
    })?;
    let path = dir.join("summary.csv");
    fs::write(&path, summary_csv(param, variants)).map_err(|e| CliError::io(&path, e))
}
