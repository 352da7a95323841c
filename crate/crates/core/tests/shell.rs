use std::path::Path;
use std::process::{Command, Output};

use ctwin::fvm::{run_simulation, Sample, TimeSeries};
use ctwin::shell::*;
use ctwin::signals::learning_signals;
use proptest::prelude::*;

fn ctwin(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctwin"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove(OUT_DIR_ENV)
        .output()
        .unwrap()
}

fn sample(t: f64, u: f64, y: f64) -> Sample {
    Sample {
        t_s: t,
        t_in_k: u,
        t_core_k: y,
        t_surface_k: y + 1.0,
        t_probe_k: y - 0.5,
        c_mean: 0.7,
        mass_balance: 1e-12,
        alpha_mult: None,
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn single_sample_series_is_two_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    write_timeseries_csv(&TimeSeries { samples: vec![sample(0.0, 293.15, 279.15)] }, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], TIMESERIES_HEADER.join(","));
    assert!(write_timeseries_csv(&TimeSeries::default(), &path).is_err());
}

#[test]
fn config_round_trip() {
    let text = r#"
case = "pan_fry"
duration_s = 600.0

[boundary.surface]
alpha_w_m2k = 20.0

[input]
kind = "sawtooth"
peak_k = 443.15
t_period_s = 500.0

[control]
setpoint_k = 335.0

[disturbance]
onset_s = 100.0
duration_s = 200.0
multiplier = 3.0
"#;
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.toml");
    std::fs::write(&a, text).unwrap();
    let cfg = load_config(&a).unwrap();
    assert_eq!(cfg.case, Case::PanFry);
    assert_eq!(cfg.scenario().boundary.surface.alpha_w_m2k, 20.0);
    let b = dir.path().join("b.toml");
    dump_config(&cfg, &b).unwrap();
    assert_eq!(load_config(&b).unwrap(), cfg);
}

#[test]
fn oven_run_csv_matches_memory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("oven.toml");
    std::fs::write(
        &cfg_path,
        "duration_s = 1200.0\noutput_interval_s = 60.0\n\n[mesh]\ndims_m = [0.02, 0.02, 0.012]\nspacing_m = 0.002\ninflation_layers = 2\nfirst_layer_height_m = 0.0005\n",
    )
    .unwrap();
    let out = ctwin(&["simulate", "--config", cfg_path.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let from_file = read_timeseries_csv(&dir.path().join("timeseries.csv")).unwrap();
    let (memory, _) = run_simulation(&load_config(&cfg_path).unwrap().scenario(), None).unwrap();
    let (f, m) = (from_file.samples.last().unwrap(), memory.samples.last().unwrap());
    assert_eq!(f.t_s, 1200.0);
    assert!(((f.t_core_k - m.t_core_k) / m.t_core_k).abs() < 1e-9);
    assert!(dir.path().join(MANIFEST_FILE).exists());
    let again = ctwin(&["simulate", "--config", cfg_path.to_str().unwrap()], &dir.path().join("again"));
    assert!(again.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("timeseries.csv")).unwrap(),
        std::fs::read(dir.path().join("again/timeseries.csv")).unwrap()
    );
}

#[test]
fn unknown_subcommand_exits_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = ctwin(&["roast"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = ctwin(&["simulate", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failing_run_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[boundary.bottom]\nalpha_w_m2k = -1.0\n").unwrap();
    let out = ctwin(&["simulate", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("boundary.bottom.alpha_w_m2k"));
    assert!(!dir.path().join(MANIFEST_FILE).exists());
}

#[test]
fn gci_inline_values_print_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = ctwin(
        &["gci", "--spacings", "1,2,4", "--values", "1.0625,1.25,2.0"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("apparent order p      = 2.000000"), "{text}");
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert!((v["statistics"]["report"]["apparent_order"].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn signal_dump_matches_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let out = ctwin(&["signals", "--dump", "--name", "sawtooth_443", "--dt", "2.5", "--duration", "1200"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let saw = learning_signals(279.15).into_iter().find(|c| c.name == "sawtooth_443").unwrap().signal;
    let mut r = csv::Reader::from_path(dir.path().join("signal.csv")).unwrap();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let t: f64 = rec[0].parse().unwrap();
        let v: f64 = rec[1].parse().unwrap();
        assert!((v - saw.evaluate(t)).abs() <= 1e-8 * v.abs());
        rows += 1;
    }
    assert_eq!(rows, 481);
}

/// First-order lag `τ = 400 s` toward `0.3 u + 0.7 · 293.15`, sampled at 1 s.
fn lag_series(levels: &[f64]) -> TimeSeries {
    let a = (-1.0f64 / 400.0).exp();
    let mut y = 293.15;
    let mut samples = vec![sample(0.0, 293.15, y)];
    for (i, l) in levels.iter().enumerate() {
        for j in 1..=600 {
            y = a * y + (1.0 - a) * (0.3 * l + 0.7 * 293.15);
            samples.push(sample((i * 600 + j) as f64, *l, y));
        }
    }
    TimeSeries { samples }
}

#[test]
fn train_evaluate_and_control_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut paths = Vec::new();
    for (i, lv) in [[400.0, 320.0, 460.0], [350.0, 440.0, 300.0], [420.0, 300.0, 380.0]].iter().enumerate() {
        let p = d.join(format!("run{i}.csv"));
        write_timeseries_csv(&lag_series(lv), &p).unwrap();
        paths.push(p.to_str().unwrap().to_string());
    }
    let cfg = d.join("rom.toml");
    std::fs::write(&cfg, "[rom]\nkind = \"quad\"\nna = 1\nnb = 1\nridge = 1e-10\n\n[control]\nduration_s = 8000.0\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = ctwin(&["train-rom", "--config", cfg, "--data", &paths.join(",")], &d.join("train"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rom = d.join("train/rom.txt");
    let rom = rom.to_str().unwrap();
    let out = ctwin(&["eval-rom", "--rom", rom, "--fom", &paths[0]], &d.join("eval"));
    assert!(out.status.success());
    assert!(stdout(&out).contains("E_max"));
    let out = ctwin(&["control", "--config", cfg, "--plant", "rom", "--rom", rom], &d.join("loop"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(d.join("loop/closed_loop.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), CLOSED_LOOP_HEADER);
    let last = r.records().last().unwrap().unwrap();
    let y: f64 = last[2].parse().unwrap();
    assert!((y - 330.0).abs() < 0.5, "final y {y}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip_is_within_relative_tolerance(
        rows in proptest::collection::vec((0.0f64..1e4, 250.0f64..600.0, -1e-3f64..1e-3, 0.5f64..3.0), 1..20),
        with_alpha: bool,
    ) {
        let series = TimeSeries {
            samples: rows
                .iter()
                .map(|&(t, y, m, a)| Sample { mass_balance: m, alpha_mult: with_alpha.then_some(a), ..sample(t, y + 10.0, y) })
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_timeseries_csv(&series, &path).unwrap();
        let back = read_timeseries_csv(&path).unwrap();
        prop_assert_eq!(back.samples.len(), series.samples.len());
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) || a == b;
        for (x, y) in series.samples.iter().zip(&back.samples) {
            for (a, b) in [(x.t_s, y.t_s), (x.t_in_k, y.t_in_k), (x.t_core_k, y.t_core_k), (x.t_surface_k, y.t_surface_k),
                           (x.t_probe_k, y.t_probe_k), (x.c_mean, y.c_mean), (x.mass_balance, y.mass_balance)] {
                prop_assert!(close(a, b), "{} vs {}", a, b);
            }
            prop_assert_eq!(x.alpha_mult.is_some(), y.alpha_mult.is_some());
        }
    }
}
