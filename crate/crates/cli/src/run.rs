//! `run`: simulate one scenario and write its artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rbis_core::analysis::{accuracy_precision, filter_outliers, histogram, sigma_table, OffsetTrace};
use rbis_core::ptp::run_ptp_session;
use rbis_core::rbis::run_rbis;

use crate::config::{AnalysisSettings, Scenario};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.toml";

/// Report, σ-table and histogram for one trace. Shared by `run` and `report`
/// so both produce identical bytes for the same trace.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisArtifacts {
    pub report_txt: String,
    pub sigma_csv: String,
    pub histogram_csv: String,
    pub summary: TraceSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub samples: usize,
    pub accuracy_ps: Option<f64>,
    pub precision_ps: Option<f64>,
    pub outlier_count: usize,
}

pub fn analyze(trace: &OffsetTrace, settings: &AnalysisSettings) -> Result<AnalysisArtifacts, CliError> {
    let hist = histogram(trace, settings.bin_width_ps, settings.outlier_bound_ps).map_err(CliError::runtime)?;
    let (_, outliers) = filter_outliers(trace, settings.outlier_bound_ps).map_err(CliError::runtime)?;
    let (report_txt, sigma_csv, summary) = match sigma_table(trace, settings.outlier_bound_ps) {
        Ok(r) => (
            r.to_text(),
            r.sigma_csv(),
            TraceSummary {
                samples: trace.len(),
                accuracy_ps: Some(r.mean_ps),
                precision_ps: Some(r.std_ps),
                outlier_count: r.outlier_count,
            },
        ),
        Err(e) => {
            let m = &trace.meta;
            let text = format!(
                "scenario = {}\nseed = {}\nmode = {}\nsamples_full = {}\noutlier_count = {}\nstatus = {}\n",
                m.scenario,
                m.seed,
                m.mode,
                trace.len(),
                outliers,
                e
            );
            let fallback = accuracy_precision(trace).ok();
            (
                text,
                "k,lower_ps,upper_ps,p_reduced,p_full,lower_us,upper_us\n".to_string(),
                TraceSummary {
                    samples: trace.len(),
                    accuracy_ps: fallback.map(|f| f.0),
                    precision_ps: fallback.map(|f| f.1),
                    outlier_count: outliers,
                },
            )
        }
    };
    Ok(AnalysisArtifacts {
        report_txt,
        sigma_csv,
        histogram_csv: hist.to_csv(),
        summary,
    })
}

/// One slave's outcome under one protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    pub protocol: &'static str,
    pub ue: String,
    pub trace: OffsetTrace,
    pub sync_log_csv: String,
    pub analysis: AnalysisArtifacts,
}

impl TraceResult {
    pub fn stem(&self) -> String {
        format!("{}_{}", self.protocol, self.ue)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub traces: Vec<TraceResult>,
    pub event_logs: Vec<(&'static str, String)>,
}

fn trace_csv(trace: &OffsetTrace) -> Result<String, CliError> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).map_err(CliError::runtime)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Simulate every protocol the scenario asks for. Nothing is written to disk.
pub fn simulate(scenario: &Scenario) -> Result<RunOutput, CliError> {
    let mut traces = Vec::new();
    let mut event_logs = Vec::new();
    if scenario.protocol.runs_rbis() {
        let cfg = scenario.rbis_config()?;
        let out = run_rbis(&cfg).map_err(CliError::runtime)?;
        for slave in out.slaves {
            let analysis = analyze(&slave.trace, &scenario.analysis)?;
            traces.push(TraceResult {
                protocol: "rbis",
                ue: slave.name.clone(),
                sync_log_csv: slave.sync_log_csv(),
                trace: slave.trace,
                analysis,
            });
        }
        if let Some(log) = out.event_log {
            event_logs.push(("rbis", log));
        }
    }
    if scenario.protocol.runs_ptp() {
        for (name, cfg) in scenario.ptp_configs()? {
            let mut out = run_ptp_session(&cfg).map_err(CliError::runtime)?;
            out.trace.meta.seed = scenario.seed;
            let analysis = analyze(&out.trace, &scenario.analysis)?;
            traces.push(TraceResult {
                protocol: "ptp",
                ue: name.clone(),
                sync_log_csv: out.sync_log_csv(),
                trace: out.trace,
                analysis,
            });
            if let Some(log) = out.event_log {
                event_logs.push(("ptp", format!("# slave={name}\n{log}")));
            }
        }
    }
    Ok(RunOutput {
        scenario: scenario.clone(),
        traces,
        event_logs,
    })
}

/// Manifest: tool version, seed, artifact list and the fully resolved config.
pub fn manifest_text(scenario: &Scenario, artifacts: &[String]) -> String {
    let mut table = toml::Table::new();
    table.insert("tool".into(), "rbis-sim".into());
    table.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    table.insert("seed".into(), toml::Value::Integer(scenario.seed as i64));
    table.insert(
        "artifacts".into(),
        toml::Value::Array(artifacts.iter().map(|a| a.as_str().into()).collect()),
    );
    let config = toml::Value::try_from(scenario.to_raw()).expect("scenario serializes");
    table.insert("config".into(), config);
    toml::to_string(&table).expect("manifest serializes")
}

/// Refuse to write into a non-empty directory unless `overwrite` is set.
pub fn prepare_dir(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.next().is_some();
        if non_empty && !overwrite {
            return Err(CliError::Runtime(format!(
                "output directory {} already exists and is not empty (use --overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(dir: &Path, name: &str, content: &str, written: &mut Vec<String>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
    written.push(name.to_string());
    Ok(())
}

/// Write all artifacts of `output` into `dir` and return their file names.
pub fn write_artifacts(output: &RunOutput, dir: &Path) -> Result<Vec<String>, CliError> {
    let mut written = Vec::new();
    for t in &output.traces {
        let stem = t.stem();
        write(dir, &format!("{stem}_trace.csv"), &trace_csv(&t.trace)?, &mut written)?;
        write(dir, &format!("{stem}_sync.csv"), &t.sync_log_csv, &mut written)?;
        write(dir, &format!("{stem}_report.txt"), &t.analysis.report_txt, &mut written)?;
        write(dir, &format!("{stem}_sigma.csv"), &t.analysis.sigma_csv, &mut written)?;
        write(
            dir,
            &format!("{stem}_histogram.csv"),
            &t.analysis.histogram_csv,
            &mut written,
        )?;
    }
    for (protocol, log) in &output.event_logs {
        let name = format!("{protocol}_events.tsv");
        let path = dir.join(&name);
        // PTP writes one log section per slave into the same file.
        let mut content = if written.contains(&name) {
            fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?
        } else {
            String::new()
        };
        content.push_str(log);
        fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
        if !written.contains(&name) {
            written.push(name);
        }
    }
    let manifest = manifest_text(&output.scenario, &written);
    write(dir, MANIFEST, &manifest, &mut written)?;
    Ok(written)
}

pub fn default_out_dir(scenario: &Scenario) -> PathBuf {
    scenario
        .output_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name))
}

/// Simulate and write. Returns the in-memory results for summaries.
pub fn run(scenario: &Scenario, dir: &Path, overwrite: bool) -> Result<RunOutput, CliError> {
    let output = simulate(scenario)?;
    prepare_dir(dir, overwrite)?;
    write_artifacts(&output, dir)?;
    Ok(output)
}

pub fn summary_line(t: &TraceResult) -> String {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.3} ns", x / 1e3));
    format!(
        "{:<5} {:<12} samples={:<7} accuracy={} precision={} outliers={}",
        t.protocol,
        t.ue,
        t.analysis.summary.samples,
        fmt(t.analysis.summary.accuracy_ps),
        fmt(t.analysis.summary.precision_ps),
        t.analysis.summary.outlier_count
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_scenario, scenario_from_manifest};

    const TWO_UE: &str = r#"
name = "two"
duration_s = 2
seed = 3
protocol = "both"
sampling_interval_ms = 100
ptp.sync_interval_ms = 50

[[ue]]
name = "m"
role = "master"
distance_m = 50

[[ue]]
name = "s"
role = "slave"
distance_m = 80
clock.offset_init_ps = -4000000
timestamp.jitter_sigma_ps = 1500
"#;

    #[test]
    fn both_protocols_produce_traces() {
        let s = parse_scenario(TWO_UE, "t").unwrap();
        let out = simulate(&s).unwrap();
        let names: Vec<String> = out.traces.iter().map(|t| t.stem()).collect();
        assert_eq!(names, ["rbis_s", "ptp_s"]);
        for t in &out.traces {
            assert_eq!(t.trace.meta.seed, 3);
            assert!(t.trace.len() >= 19, "{} has {}", t.stem(), t.trace.len());
        }
    }

    #[test]
    fn manifest_echo_round_trips() {
        let s = parse_scenario(TWO_UE, "t").unwrap();
        let m = manifest_text(&s, &["a.csv".to_string()]);
        assert!(m.contains("seed = 3"));
        assert!(m.contains("[config.gnb]"));
        assert!(m.contains("[[config.ue]]"));
        assert_eq!(scenario_from_manifest(&m, "manifest").unwrap(), s);
    }

    #[test]
    fn short_trace_still_reports() {
        let trace = OffsetTrace::default();
        let a = analyze(&trace, &AnalysisSettings::default()).unwrap();
        assert!(a.report_txt.contains("status = need at least 2 samples"));
        assert_eq!(a.summary.accuracy_ps, None);
    }
}
