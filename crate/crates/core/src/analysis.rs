//! Offset-trace statistics: outlier filtering, accuracy/precision, σ-confidence
//! tables, histograms and Gaussian density overlays.
//!
//! Accuracy is the signed mean of the offset samples, precision their sample
//! standard deviation. Moments are accumulated in exact integer arithmetic so
//! results do not depend on sample order.

use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::AnalysisError;
use crate::sim::{RngStream, SimTime, PS_PER_US};

/// Samples beyond ±10 µs are treated as outliers unless configured otherwise.
pub const DEFAULT_OUTLIER_BOUND_PS: i64 = 10 * PS_PER_US as i64;

/// Standard normal coverage of ±kσ for k = 1, 2, 3.
pub const NORMAL_COVERAGE: [f64; 3] = [0.682_689_492, 0.954_499_736, 0.997_300_204];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceMeta {
    pub scenario: String,
    pub seed: u64,
    /// Protocol and correction mode, e.g. `rbis/paper_full` or `ptp`.
    pub mode: String,
}

/// Time series of master/slave clock offsets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OffsetTrace {
    pub meta: TraceMeta,
    samples: Vec<(SimTime, i64)>,
}

impl OffsetTrace {
    pub fn new(meta: TraceMeta) -> Self {
        OffsetTrace {
            meta,
            samples: Vec::new(),
        }
    }

    pub fn from_samples(meta: TraceMeta, samples: Vec<(SimTime, i64)>) -> Result<Self, AnalysisError> {
        let mut trace = OffsetTrace::new(meta);
        for (t, v) in samples {
            trace.push(t, v)?;
        }
        Ok(trace)
    }

    /// Append a sample; time must strictly increase.
    pub fn push(&mut self, time: SimTime, offset_ps: i64) -> Result<(), AnalysisError> {
        if let Some((last, _)) = self.samples.last() {
            if time <= *last {
                return Err(AnalysisError::NonIncreasingTime {
                    time: time.as_ps(),
                    previous: last.as_ps(),
                });
            }
        }
        self.samples.push((time, offset_ps));
        Ok(())
    }

    /// Like [`push`](Self::push), but a sample at the same instant as the last
    /// one replaces it.
    pub fn record(&mut self, time: SimTime, offset_ps: i64) -> Result<(), AnalysisError> {
        match self.samples.last_mut() {
            Some(last) if last.0 == time => {
                last.1 = offset_ps;
                Ok(())
            }
            _ => self.push(time, offset_ps),
        }
    }

    pub fn samples(&self) -> &[(SimTime, i64)] {
        &self.samples
    }

    pub fn offsets(&self) -> impl Iterator<Item = i64> + '_ {
        self.samples.iter().map(|(_, v)| *v)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), AnalysisError> {
        writeln!(out, "# scenario={}", self.meta.scenario)?;
        writeln!(out, "# seed={}", self.meta.seed)?;
        writeln!(out, "# mode={}", self.meta.mode)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["true_time_ps", "offset_ps", "offset_us"])?;
        for (t, v) in &self.samples {
            w.write_record([t.as_ps().to_string(), v.to_string(), format_us(*v as f64)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse the CSV written by [`write_csv`](Self::write_csv). Leading `# key=value`
    /// lines carry metadata; only the first two columns are required.
    pub fn read_csv<R: Read>(mut input: R) -> Result<Self, AnalysisError> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut meta = TraceMeta::default();
        let mut body_start = 0;
        let mut meta_lines = 0;
        for line in text.split_inclusive('\n') {
            let Some(rest) = line.trim_end().strip_prefix('#') else {
                break;
            };
            body_start += line.len();
            meta_lines += 1;
            if let Some((key, value)) = rest.trim().split_once('=') {
                match key.trim() {
                    "scenario" => meta.scenario = value.trim().to_string(),
                    "mode" => meta.mode = value.trim().to_string(),
                    "seed" => {
                        meta.seed = value.trim().parse().map_err(|_| AnalysisError::MalformedRow {
                            row: meta_lines,
                            message: format!("invalid seed '{}'", value.trim()),
                        })?
                    }
                    _ => {}
                }
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(&text.as_bytes()[body_start..]);
        let headers = reader.headers()?.clone();
        if headers.get(0) != Some("true_time_ps") || headers.get(1) != Some("offset_ps") {
            return Err(AnalysisError::MalformedRow {
                row: meta_lines + 1,
                message: "expected header 'true_time_ps,offset_ps'".into(),
            });
        }
        let mut trace = OffsetTrace::new(meta);
        for record in reader.records() {
            let record = record?;
            let row = meta_lines + record.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize, name: &str| {
                record.get(i).ok_or_else(|| AnalysisError::MalformedRow {
                    row,
                    message: format!("missing {name}"),
                })
            };
            let t: u64 = field(0, "true_time_ps")?
                .trim()
                .parse()
                .map_err(|_| AnalysisError::MalformedRow {
                    row,
                    message: format!("invalid true_time_ps '{}'", record.get(0).unwrap_or("")),
                })?;
            let v: i64 = field(1, "offset_ps")?
                .trim()
                .parse()
                .map_err(|_| AnalysisError::MalformedRow {
                    row,
                    message: format!("invalid offset_ps '{}'", record.get(1).unwrap_or("")),
                })?;
            trace
                .push(SimTime::from_ps(t), v)
                .map_err(|e| AnalysisError::MalformedRow {
                    row,
                    message: e.to_string(),
                })?;
        }
        Ok(trace)
    }
}

/// Picoseconds rendered as microseconds with six decimals.
pub fn format_us(ps: f64) -> String {
    format!("{:.6}", ps / PS_PER_US as f64)
}

/// Remove samples with |offset| > `bound_ps`. Returns the reduced trace and the
/// number of samples removed.
pub fn filter_outliers(trace: &OffsetTrace, bound_ps: i64) -> Result<(OffsetTrace, usize), AnalysisError> {
    if bound_ps <= 0 {
        return Err(AnalysisError::NonPositiveBound(bound_ps));
    }
    let samples: Vec<_> = trace
        .samples
        .iter()
        .copied()
        .filter(|(_, v)| v.unsigned_abs() <= bound_ps as u64)
        .collect();
    let removed = trace.len() - samples.len();
    Ok((
        OffsetTrace {
            meta: trace.meta.clone(),
            samples,
        },
        removed,
    ))
}

/// Sample mean and N−1 standard deviation.
pub fn mean_std(values: &[i64]) -> Result<(f64, f64), AnalysisError> {
    let n = values.len();
    if n < 2 {
        return Err(AnalysisError::TooFewSamples { needed: 2, got: n });
    }
    let sum: i128 = values.iter().map(|v| *v as i128).sum();
    let mean = sum as f64 / n as f64;
    let exact = values
        .iter()
        .try_fold(0i128, |acc, v| acc.checked_add((*v as i128).checked_mul(*v as i128)?))
        .and_then(|sq| (n as i128).checked_mul(sq))
        .and_then(|nsq| sum.checked_mul(sum).map(|s2| nsq - s2));
    let var = match exact {
        Some(num) => num as f64 / (n as f64 * (n - 1) as f64),
        None => values.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64,
    };
    Ok((mean, var.max(0.0).sqrt()))
}

/// `(accuracy, precision)` of a trace: signed mean and sample standard deviation.
pub fn accuracy_precision(trace: &OffsetTrace) -> Result<(f64, f64), AnalysisError> {
    let values: Vec<i64> = trace.offsets().collect();
    mean_std(&values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaRow {
    pub k: u32,
    pub lower_ps: f64,
    pub upper_ps: f64,
    /// Fraction of the reduced trace inside the interval.
    pub p_reduced: f64,
    /// Fraction of the full trace (outliers included) inside the interval.
    pub p_full: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub mean_ps: f64,
    pub sigma_ps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityOverlays {
    pub full: GaussianFit,
    pub reduced: GaussianFit,
    /// Reduced-trace fit with σ widened until ±σ covers at least 68.27 % of
    /// the full trace, capped at the full-trace σ.
    pub optimized: GaussianFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionReport {
    pub meta: TraceMeta,
    pub samples_full: usize,
    pub samples_reduced: usize,
    pub outlier_bound_ps: i64,
    pub outlier_count: usize,
    pub mean_ps: f64,
    pub std_ps: f64,
    pub rows: [SigmaRow; 3],
    pub overlays: DensityOverlays,
}

fn fraction_within(values: &[i64], lower: f64, upper: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let inside = values
        .iter()
        .filter(|v| {
            let x = **v as f64;
            x >= lower && x <= upper
        })
        .count();
    inside as f64 / values.len() as f64
}

/// Accuracy/precision on the outlier-free trace plus kσ coverage for k = 1..3,
/// over the reduced (P1) and full (P2) traces.
pub fn sigma_table(trace: &OffsetTrace, outlier_bound_ps: i64) -> Result<PrecisionReport, AnalysisError> {
    let (reduced, outliers) = filter_outliers(trace, outlier_bound_ps)?;
    let reduced_values: Vec<i64> = reduced.offsets().collect();
    let full_values: Vec<i64> = trace.offsets().collect();
    let (mean, std) = mean_std(&reduced_values)?;
    let rows = [1u32, 2, 3].map(|k| {
        let half = k as f64 * std;
        let (lower, upper) = (mean - half, mean + half);
        SigmaRow {
            k,
            lower_ps: lower,
            upper_ps: upper,
            p_reduced: fraction_within(&reduced_values, lower, upper),
            p_full: fraction_within(&full_values, lower, upper),
        }
    });
    Ok(PrecisionReport {
        meta: trace.meta.clone(),
        samples_full: full_values.len(),
        samples_reduced: reduced_values.len(),
        outlier_bound_ps,
        outlier_count: outliers,
        mean_ps: mean,
        std_ps: std,
        rows,
        overlays: density_overlays(trace, outlier_bound_ps)?,
    })
}

/// Gaussian parameters for the full trace, the reduced trace and a
/// coverage-calibrated compromise between them.
pub fn density_overlays(trace: &OffsetTrace, outlier_bound_ps: i64) -> Result<DensityOverlays, AnalysisError> {
    let full_values: Vec<i64> = trace.offsets().collect();
    let (full_mean, full_std) = mean_std(&full_values)?;
    let (reduced, _) = filter_outliers(trace, outlier_bound_ps)?;
    let reduced_values: Vec<i64> = reduced.offsets().collect();
    let (red_mean, red_std) = mean_std(&reduced_values)?;

    let mut dist: Vec<f64> = full_values.iter().map(|v| (*v as f64 - red_mean).abs()).collect();
    dist.sort_by(f64::total_cmp);
    let needed = (NORMAL_COVERAGE[0] * dist.len() as f64).ceil() as usize;
    let coverage_sigma = dist[needed.clamp(1, dist.len()) - 1];
    let lo = red_std.min(full_std);
    let hi = red_std.max(full_std);
    let opt_sigma = coverage_sigma.clamp(lo, hi);

    Ok(DensityOverlays {
        full: GaussianFit {
            mean_ps: full_mean,
            sigma_ps: full_std,
        },
        reduced: GaussianFit {
            mean_ps: red_mean,
            sigma_ps: red_std,
        },
        optimized: GaussianFit {
            mean_ps: red_mean,
            sigma_ps: opt_sigma,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub bin_width_ps: i64,
    /// `(bin_center_ps, count)`; centers are multiples of the bin width.
    pub bins: Vec<(i64, u64)>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# bin_width_ps={}", self.bin_width_ps);
        let _ = writeln!(s, "# underflow={}", self.underflow);
        let _ = writeln!(s, "# overflow={}", self.overflow);
        s.push_str("bin_center_ps,count\n");
        for (c, n) in &self.bins {
            let _ = writeln!(s, "{c},{n}");
        }
        s
    }
}

/// Uniform bins centred on multiples of `bin_width_ps`, covering at least
/// `[-bound_ps, +bound_ps]`. Samples outside land in the underflow/overflow counts.
pub fn histogram(trace: &OffsetTrace, bin_width_ps: i64, bound_ps: i64) -> Result<Histogram, AnalysisError> {
    if bin_width_ps <= 0 {
        return Err(AnalysisError::NonPositiveBinWidth(bin_width_ps));
    }
    if bound_ps <= 0 {
        return Err(AnalysisError::NonPositiveBound(bound_ps));
    }
    let half_bins = (bound_ps + bin_width_ps - 1) / bin_width_ps;
    let mut counts = vec![0u64; (2 * half_bins + 1) as usize];
    let (mut underflow, mut overflow) = (0, 0);
    for v in trace.offsets() {
        // nearest centre, ties toward +∞
        let k = (2 * v as i128 + bin_width_ps as i128).div_euclid(2 * bin_width_ps as i128) as i64;
        if k < -half_bins {
            underflow += 1;
        } else if k > half_bins {
            overflow += 1;
        } else {
            counts[(k + half_bins) as usize] += 1;
        }
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, n)| ((i as i64 - half_bins) * bin_width_ps, n))
        .collect();
    Ok(Histogram {
        bin_width_ps,
        bins,
        underflow,
        overflow,
    })
}

impl PrecisionReport {
    /// Key-value text rendering; every numeric field in picoseconds with a µs companion.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("scenario", self.meta.scenario.clone());
        kv("seed", self.meta.seed.to_string());
        kv("mode", self.meta.mode.clone());
        kv("samples_full", self.samples_full.to_string());
        kv("samples_reduced", self.samples_reduced.to_string());
        kv("outlier_bound_ps", self.outlier_bound_ps.to_string());
        kv("outlier_bound_us", format_us(self.outlier_bound_ps as f64));
        kv("outlier_count", self.outlier_count.to_string());
        kv("accuracy_ps", format!("{:.3}", self.mean_ps));
        kv("accuracy_us", format_us(self.mean_ps));
        kv("accuracy_abs_ps", format!("{:.3}", self.mean_ps.abs()));
        kv("accuracy_abs_us", format_us(self.mean_ps.abs()));
        kv("precision_ps", format!("{:.3}", self.std_ps));
        kv("precision_us", format_us(self.std_ps));
        for row in &self.rows {
            let k = row.k;
            kv(
                &format!("sigma{k}_interval_ps"),
                format!("[{:.3}, {:.3}]", row.lower_ps, row.upper_ps),
            );
            kv(
                &format!("sigma{k}_interval_us"),
                format!("[{}, {}]", format_us(row.lower_ps), format_us(row.upper_ps)),
            );
            kv(&format!("sigma{k}_p_reduced"), format!("{:.4}", row.p_reduced));
            kv(&format!("sigma{k}_p_full"), format!("{:.4}", row.p_full));
        }
        let o = &self.overlays;
        for (name, fit) in [
            ("full", o.full),
            ("reduced", o.reduced),
            ("optimized_coverage_calibrated", o.optimized),
        ] {
            kv(&format!("density_{name}_mean_ps"), format!("{:.3}", fit.mean_ps));
            kv(&format!("density_{name}_sigma_ps"), format!("{:.3}", fit.sigma_ps));
            kv(&format!("density_{name}_sigma_us"), format_us(fit.sigma_ps));
        }
        s
    }

    /// σ-table as CSV: `k,lower_ps,upper_ps,p_reduced,p_full,lower_us,upper_us`.
    pub fn sigma_csv(&self) -> String {
        let mut s = String::from("k,lower_ps,upper_ps,p_reduced,p_full,lower_us,upper_us\n");
        for row in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{},{}",
                row.k,
                row.lower_ps.round() as i64,
                row.upper_ps.round() as i64,
                row.p_reduced,
                row.p_full,
                format_us(row.lower_ps),
                format_us(row.upper_ps)
            );
        }
        s
    }
}

/// Parameters for a synthetic offset trace: a Gaussian core confined to the
/// outlier border plus a fixed number of excursions beyond it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub core_samples: usize,
    pub outliers: usize,
    pub mean_ps: f64,
    pub sigma_ps: f64,
    pub bound_ps: i64,
    pub sample_interval_ps: u64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            core_samples: 35_000,
            outliers: 180,
            mean_ps: -1_320_000.0,
            sigma_ps: 2_950_000.0,
            bound_ps: DEFAULT_OUTLIER_BOUND_PS,
            sample_interval_ps: 20_000_000_000,
            seed: 1,
        }
    }
}

/// Build a fixture trace. Core draws outside `±bound_ps` are redrawn so the
/// outlier count is exactly `spec.outliers`; outliers are spread uniformly over
/// `(1.5·bound, 3·bound)` in magnitude with random sign and position.
pub fn synthetic_fixture(spec: &FixtureSpec) -> OffsetTrace {
    let mut rng = RngStream::new(spec.seed, 0xF1C7);
    let bound = spec.bound_ps as f64;
    let total = spec.core_samples + spec.outliers;
    let mut is_outlier = vec![false; total];
    let mut placed = 0;
    while placed < spec.outliers {
        let i = rng.uniform_u64(0, total as u64 - 1) as usize;
        if !is_outlier[i] {
            is_outlier[i] = true;
            placed += 1;
        }
    }
    let samples = is_outlier
        .iter()
        .enumerate()
        .map(|(i, outlier)| {
            let value = if *outlier {
                let mag = rng.uniform(1.5 * bound, 3.0 * bound).round();
                if rng.coin() {
                    mag
                } else {
                    -mag
                }
            } else {
                loop {
                    let x = (spec.mean_ps + rng.gaussian(spec.sigma_ps)).round();
                    if x.abs() <= bound {
                        break x;
                    }
                }
            };
            (SimTime::from_ps((i as u64 + 1) * spec.sample_interval_ps), value as i64)
        })
        .collect();
    OffsetTrace {
        meta: TraceMeta {
            scenario: "synthetic-fixture".into(),
            seed: spec.seed,
            mode: "fixture".into(),
        },
        samples,
    }
}
