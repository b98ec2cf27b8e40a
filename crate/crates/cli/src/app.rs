//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_scenario, AnalysisSettings, ConfigError, Scenario};
use crate::error::CliError;
use crate::report::{comparison_csv, report_traces, write_reports};
use crate::run::{default_out_dir, run, summary_line};
use crate::sweep::{sweep, write_sweep, SweepParam};

#[derive(Debug, Parser)]
#[command(
    name = "rbis-sim",
    version,
    about = "Simulate receiver/receiver clock synchronization over 5G NR broadcasts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its artifacts.
    Run(RunArgs),
    /// Run a scenario once per value of one parameter.
    Sweep(SweepArgs),
    /// Analyze existing trace CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory. Defaults to `output_dir` from the config, else `out/<name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write into an existing, non-empty output directory.
    #[arg(long)]
    pub overwrite: bool,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// distance, jitter_sigma, mu, ssb_period or correction_mode.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Trace CSV files.
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// Write reports here instead of printing them.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Take analysis settings from this scenario file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub outlier_bound_ps: Option<i64>,
    #[arg(long)]
    pub bin_width_ps: Option<i64>,
    #[arg(long, short)]
    pub quiet: bool,
}

fn scenario(common: &Common) -> Result<Scenario, CliError> {
    let mut s = load_scenario(&common.config)?;
    if let Some(seed) = common.seed {
        if seed > i64::MAX as u64 {
            return Err(ConfigError::new("--seed", format!("seed {seed} must not exceed {}", i64::MAX)).into());
        }
        s.seed = seed;
    }
    Ok(s)
}

fn run_cmd(args: &RunArgs) -> Result<(), CliError> {
    let s = scenario(&args.common)?;
    let dir = args.common.out.clone().unwrap_or_else(|| default_out_dir(&s));
    let out = run(&s, &dir, args.common.overwrite)?;
    if !args.common.quiet {
        println!("scenario {} (seed {}) -> {}", s.name, s.seed, dir.display());
        for t in &out.traces {
            println!("{}", summary_line(t));
        }
    }
    Ok(())
}

fn sweep_cmd(args: &SweepArgs) -> Result<(), CliError> {
    let param: SweepParam = args.param.parse()?;
    let s = scenario(&args.common)?;
    let variants = sweep(&s, param, &args.values)?;
    let dir = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out_dir(&s).join(format!("sweep_{}", param.as_str())));
    write_sweep(param, &variants, &dir, args.common.overwrite)?;
    if !args.common.quiet {
        println!(
            "sweep {} over {} values -> {}",
            param.as_str(),
            variants.len(),
            dir.display()
        );
        for v in &variants {
            for t in &v.output.traces {
                println!("{}={:<8} {}", param.as_str(), v.value, summary_line(t));
            }
        }
    }
    Ok(())
}

fn report_cmd(args: &ReportArgs) -> Result<(), CliError> {
    let mut settings = match &args.config {
        Some(p) => load_scenario(p)?.analysis,
        None => AnalysisSettings::default(),
    };
    if let Some(b) = args.outlier_bound_ps {
        if b <= 0 {
            return Err(ConfigError::new("--outlier-bound-ps", "must be positive").into());
        }
        settings.outlier_bound_ps = b;
    }
    if let Some(w) = args.bin_width_ps {
        if w <= 0 {
            return Err(ConfigError::new("--bin-width-ps", "must be positive").into());
        }
        settings.bin_width_ps = w;
    }
    let reports = report_traces(&args.traces, &settings)?;
    if let Some(dir) = &args.out {
        write_reports(&reports, dir)?;
    }
    if !args.quiet {
        for r in &reports {
            println!("# {}", r.source.display());
            print!("{}", r.artifacts.report_txt);
            println!();
        }
        if reports.len() > 1 {
            print!("{}", comparison_csv(&reports));
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}
