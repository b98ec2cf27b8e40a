use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rbis_core::analysis::{synthetic_fixture, FixtureSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rbis-sim"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn sim(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SHORT: &str = r#"
name = "short"
duration_s = 3
seed = 11
protocol = "both"
sampling_interval_ms = 50
ptp.sync_interval_ms = 100

[[ue]]
name = "m"
role = "master"
distance_m = 30
timestamp.jitter_sigma_ps = 500000

[[ue]]
name = "s"
role = "slave"
distance_m = 90
clock.rate_ppm = -3
clock.offset_init_ps = 2000000
timestamp.jitter_sigma_ps = 500000
"#;

#[test]
fn minimal_run_has_duration_over_interval_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = sim(&[
        "run",
        "--config",
        repo_config("minimal.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let trace = fs::read_to_string(out.join("rbis_dut_trace.csv")).unwrap();
    let rows = trace.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, 600);
    for f in [
        "rbis_dut_sync.csv",
        "rbis_dut_report.txt",
        "rbis_dut_sigma.csv",
        "rbis_dut_histogram.csv",
        "manifest.toml",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn both_protocols_share_seed_and_differ_in_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "short.toml", SHORT);
    let out = tmp.path().join("both");
    let o = sim(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("rbis  s"));
    assert!(stdout.contains("ptp   s"));
    let rbis = fs::read_to_string(out.join("rbis_s_trace.csv")).unwrap();
    let ptp = fs::read_to_string(out.join("ptp_s_trace.csv")).unwrap();
    assert!(rbis.starts_with("# scenario=short\n# seed=11\n# mode=rbis/paper_full\n"));
    assert!(ptp.starts_with("# scenario=short\n# seed=11\n# mode=ptp\n"));
}

#[test]
fn seed_override_changes_output_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "short.toml", SHORT);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(sim(&[
        "run",
        "-q",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap()
    ])
    .status
    .success());
    assert!(sim(&[
        "run",
        "-q",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "12"
    ])
    .status
    .success());
    let ta = fs::read_to_string(a.join("rbis_s_trace.csv")).unwrap();
    let tb = fs::read_to_string(b.join("rbis_s_trace.csv")).unwrap();
    assert_ne!(ta, tb);
    let manifest = fs::read_to_string(b.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 12"));
    let echoed = rbis_cli::config::scenario_from_manifest(&manifest, "manifest").unwrap();
    let mut expected = rbis_cli::config::load_scenario(&cfg).unwrap();
    expected.seed = 12;
    assert_eq!(echoed, expected);
}

#[test]
fn manifest_config_runs_to_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "short.toml", SHORT);
    let a = tmp.path().join("a");
    assert!(sim(&[
        "run",
        "-q",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap()
    ])
    .status
    .success());
    let manifest: toml::Table = toml::from_str(&fs::read_to_string(a.join("manifest.toml")).unwrap()).unwrap();
    let echoed = write_config(tmp.path(), "echo.toml", &toml::to_string(&manifest["config"]).unwrap());
    let b = tmp.path().join("b");
    assert!(sim(&[
        "run",
        "-q",
        "--config",
        echoed.to_str().unwrap(),
        "--out",
        b.to_str().unwrap()
    ])
    .status
    .success());
    for f in [
        "rbis_s_trace.csv",
        "ptp_s_trace.csv",
        "rbis_s_report.txt",
        "manifest.toml",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // The manifest itself is accepted as a config.
    let c = tmp.path().join("c");
    let direct = a.join("manifest.toml");
    assert!(sim(&[
        "run",
        "-q",
        "--config",
        direct.to_str().unwrap(),
        "--out",
        c.to_str().unwrap()
    ])
    .status
    .success());
    assert_eq!(
        fs::read(a.join("rbis_s_trace.csv")).unwrap(),
        fs::read(c.join("rbis_s_trace.csv")).unwrap()
    );
}

#[test]
fn output_collision_needs_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "short.toml", SHORT);
    let out = tmp.path().join("o");
    let args = [
        "run",
        "-q",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    assert!(sim(&args).status.success());
    let again = sim(&args);
    assert_eq!(again.status.code(), Some(3));
    assert!(stderr(&again).contains("--overwrite"));
    let mut forced = args.to_vec();
    forced.push("--overwrite");
    assert!(sim(&forced).status.success());
}

#[test]
fn config_errors_exit_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(
        tmp.path(),
        "bad.toml",
        &SHORT.replace("clock.rate_ppm = -3", "clock.rate_ppm = -3000"),
    );
    let o = sim(&[
        "run",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.toml:19:"), "{err}");
    assert!(err.contains("clock.rate_ppm"), "{err}");

    let unknown = write_config(
        tmp.path(),
        "unknown.toml",
        &SHORT.replace("seed = 11", "seed = 11\nsed = 3"),
    );
    let o = sim(&["run", "--config", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown.toml:5:"), "{}", stderr(&o));

    let o = sim(&["run", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_reproduces_inline_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "short.toml", SHORT);
    let out = tmp.path().join("run");
    assert!(sim(&[
        "run",
        "-q",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let rep = tmp.path().join("rep");
    let o = sim(&[
        "report",
        "-q",
        out.join("rbis_s_trace.csv").to_str().unwrap(),
        out.join("ptp_s_trace.csv").to_str().unwrap(),
        "--out",
        rep.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for stem in ["rbis_s", "ptp_s"] {
        for suffix in ["report.txt", "sigma.csv", "histogram.csv"] {
            let f = format!("{stem}_{suffix}");
            assert_eq!(fs::read(out.join(&f)).unwrap(), fs::read(rep.join(&f)).unwrap(), "{f}");
        }
    }
    let cmp = fs::read_to_string(rep.join("comparison.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 3);
    assert!(cmp.lines().nth(1).unwrap().starts_with("rbis_s,"));
}

#[test]
fn report_on_fixture_has_sigma_table_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("fixture.csv");
    synthetic_fixture(&FixtureSpec::default())
        .write_csv(fs::File::create(&path).unwrap())
        .unwrap();
    let o = sim(&["report", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("samples_full = 35180"));
    assert!(text.contains("outlier_count = 180"));
    for k in 1..=3 {
        assert!(text.contains(&format!("sigma{k}_p_reduced = ")));
        assert!(text.contains(&format!("sigma{k}_p_full = ")));
    }
}

#[test]
fn report_rejects_malformed_csv_with_row() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "broken.csv", "true_time_ps,offset_ps\n10,1\n20,2\n15,3\n");
    let o = sim(&["report", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("row 4"), "{}", stderr(&o));
}

#[test]
fn sweep_mu_writes_summary_and_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "mu.toml",
        &SHORT
            .replace("protocol = \"both\"", "protocol = \"rbis\"")
            .replace("timestamp.jitter_sigma_ps = 500000", "")
            .replace("clock.rate_ppm = -3", "")
            .replace("seed = 11", "seed = 11\nrbis.correction_mode = \"half\""),
    );
    let out = tmp.path().join("sweep");
    let o = sim(&[
        "sweep",
        "-q",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "mu",
        "--values",
        "0,1,2,3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    // Residual quantization error shrinks with the TA step.
    let residual: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(6).unwrap().parse::<f64>().unwrap().abs())
        .collect();
    for (mu, r) in residual.iter().enumerate() {
        let half_step_ps = 520_833.0 / (1 << mu) as f64 / 2.0;
        assert!(*r <= half_step_ps, "mu {mu}: {r}");
    }
    for mu in 0..4 {
        assert!(out.join(format!("mu_{mu}")).join("manifest.toml").is_file());
    }
}

#[test]
fn sweep_parameter_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "short.toml", SHORT);
    let c = cfg.to_str().unwrap();
    let o = sim(&["sweep", "--config", c, "--param", "height", "--values", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweepable: distance, jitter_sigma, mu, ssb_period, correction_mode"));
    let o = sim(&["sweep", "--config", c, "--param", "mu", "--values="]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = sim(&["sweep", "--config", c, "--param", "mu", "--values", "9"]);
    assert_eq!(o.status.code(), Some(2));
}
