//! `report`: re-analyze trace CSVs written by an earlier run or another tool.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rbis_core::analysis::{format_us, OffsetTrace};

use crate::config::AnalysisSettings;
use crate::error::CliError;
use crate::run::{analyze, AnalysisArtifacts};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceReport {
    pub source: PathBuf,
    pub stem: String,
    pub artifacts: AnalysisArtifacts,
}

/// `rbis_s_trace.csv` → `rbis_s`; other names keep their file stem.
pub fn report_stem(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned());
    stem.strip_suffix("_trace").map(str::to_string).unwrap_or(stem)
}

pub fn load_trace(path: &Path) -> Result<OffsetTrace, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    OffsetTrace::read_csv(file).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn report_traces(paths: &[PathBuf], settings: &AnalysisSettings) -> Result<Vec<TraceReport>, CliError> {
    paths
        .iter()
        .map(|p| {
            let trace = load_trace(p)?;
            Ok(TraceReport {
                source: p.clone(),
                stem: report_stem(p),
                artifacts: analyze(&trace, settings)?,
            })
        })
        .collect()
}

/// One row per trace: accuracy, precision and outlier count side by side.
pub fn comparison_csv(reports: &[TraceReport]) -> String {
    let mut s = String::from("trace,samples,accuracy_ps,precision_ps,outlier_count,accuracy_us,precision_us\n");
    let ps = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.3}"));
    let us = |v: Option<f64>| v.map_or(String::new(), format_us);
    for r in reports {
        let m = &r.artifacts.summary;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.stem,
            m.samples,
            ps(m.accuracy_ps),
            ps(m.precision_ps),
            m.outlier_count,
            us(m.accuracy_ps),
            us(m.precision_ps)
        );
    }
    s
}

pub fn write_reports(reports: &[TraceReport], dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let put = |name: String, content: &str| {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| CliError::io(&path, e))
    };
    for r in reports {
        put(format!("{}_report.txt", r.stem), &r.artifacts.report_txt)?;
        put(format!("{}_sigma.csv", r.stem), &r.artifacts.sigma_csv)?;
        put(format!("{}_histogram.csv", r.stem), &r.artifacts.histogram_csv)?;
    }
    if reports.len() > 1 {
        put("comparison.csv".into(), &comparison_csv(reports))?;
    }
    Ok(())
}
