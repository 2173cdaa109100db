use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use archetype_cli::{cmd_predict, cmd_run, cmd_sweep, cmd_synth, CliError, LoadedConfig};
use archetype_core::domain::{format_day, parse_day};
use serde_json::json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_archetype"))
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_json(path: &Path, v: &serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn small_synth_spec(days: usize) -> serde_json::Value {
    let t = |name: &str, base: f64, dow: [f64; 7]| {
        json!({"template": {"name": name, "base_kwh": base, "dow_mult": dow, "trend_per_year": 0.0,
            "season_amp": 0.0, "noise_sigma": 0.05, "spike_prob": 0.0, "spike_mult": 1.0}, "sites": 4})
    };
    json!({
        "days": days,
        "seed": 3,
        "templates": [
            t("flat", 200.0, [1.0; 7]),
            t("weekend", 100.0, [0.8, 0.8, 0.8, 0.8, 0.8, 2.0, 2.0]),
        ]
    })
}

/// Writes a synth spec and a pipeline config using it; returns the config path.
fn synth_setup(dir: &Path, days: usize, extra: serde_json::Value) -> PathBuf {
    write_json(&dir.join("spec.json"), &small_synth_spec(days));
    let mut cfg = json!({
        "synth_spec": "spec.json",
        "out_dir": "out",
        "split": {"seed": 1},
        "train": {"epochs": 2, "hidden_width": 8, "seed": 1, "max_windows_per_site": 20},
        "clustering": {"k": 2, "ks": [1, 2], "seed": 1}
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let p = dir.join("config.json");
    write_json(&p, &cfg);
    p
}

fn load(p: &Path) -> LoadedConfig {
    LoadedConfig::load(p).unwrap()
}

#[test]
fn synth_writes_expected_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_setup(dir.path(), 40, json!({}));
    let out = exec(&["synth", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = fs::read_to_string(dir.path().join("out/dataset.csv")).unwrap();
    assert_eq!(data.lines().count(), 1 + 8 * 40);
    assert_eq!(data.lines().next(), Some("site_id,date,kwh"));
    let truth = fs::read_to_string(dir.path().join("out/ground_truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 1 + 8);

    let manifest1 = fs::read(dir.path().join("out/manifest.json")).unwrap();
    let out = exec(&["synth", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("out/dataset.csv")).unwrap(), data);
    assert_eq!(fs::read(dir.path().join("out/manifest.json")).unwrap(), manifest1);
}

#[test]
fn synth_rejects_short_series_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_setup(dir.path(), 10, json!({}));
    let out = exec(&["synth", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("days"));
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    write_json(&cfg, &json!({"input_csv": "nowhere.csv", "out_dir": "out"}));
    let out = exec(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
}

#[test]
fn bad_invocations_exit_2() {
    assert_eq!(exec(&[]).status.code(), Some(2));
    assert_eq!(exec(&["run"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_setup(dir.path(), 60, json!({}));
    let out = exec(&["sweep", "--config", cfg.to_str().unwrap(), "--ks", "0,2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = exec(&["run", "--config", cfg.to_str().unwrap(), "--k", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = exec(&["run", "--config", cfg.to_str().unwrap(), "--epochs", "many"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_setup(dir.path(), 60, json!({}));
    let out = exec(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    for f in [
        "features.csv",
        "features.json",
        "assignment.csv",
        "models/cluster_model.json",
        "models/global.json",
        "models/expert_0.json",
        "models/expert_1.json",
        "report.json",
        "report.csv",
        "manifest.json",
    ] {
        assert!(o.join(f).is_file(), "missing {f}");
    }
    let report = fs::read_to_string(o.join("report.csv")).unwrap();
    assert_eq!(
        report.lines().next(),
        Some("site_id,cluster,smape_g,smape_e,rmse_g,rmse_e")
    );
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(o.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["config"]["clustering"]["k"], 2);
    assert_eq!(manifest["artifacts"].as_object().unwrap().len(), 9);
    assert_eq!(manifest["content_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_setup(dir.path(), 60, json!({}));
    let a = cmd_run(&load(&cfg)).unwrap();
    let first = fs::read(dir.path().join("out/manifest.json")).unwrap();
    let b = cmd_run(&load(&cfg)).unwrap();
    assert_eq!(fs::read(dir.path().join("out/manifest.json")).unwrap(), first);
    assert_eq!(a.manifest.content_hash, b.manifest.content_hash);
}

#[test]
fn run_at_k1_has_identical_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_setup(dir.path(), 60, json!({}));
    let mut c = load(&cfg);
    c.config.clustering.k = 1;
    let out = cmd_run(&c).unwrap();
    for s in &out.report().sites {
        assert_eq!(s.smape_global, s.smape_expert);
        assert_eq!(s.rmse_global, s.rmse_expert);
    }
}

#[test]
fn run_and_sweep_agree_at_the_same_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_setup(dir.path(), 60, json!({}));
    let mut c = load(&cfg);
    c.config.clustering.k = 1;
    let run = cmd_run(&c).unwrap();
    c.config.clustering.ks = vec![1];
    c.config.out_dir = "sweep_out".into();
    let sweep = cmd_sweep(&c).unwrap();
    let curve = sweep.curve();
    assert_eq!(curve.points.len(), 1);
    assert_eq!(curve.points[0].smape, run.report().overall.smape_expert);
    assert_eq!(curve.points[0].rmse, run.report().overall.rmse_expert);
    let csv = fs::read_to_string(dir.path().join("sweep_out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    c.config.clustering.k = 2;
    c.config.clustering.ks = vec![1, 2];
    let sweep = cmd_sweep(&c).unwrap();
    c.config.out_dir = "run2".into();
    let run2 = cmd_run(&c).unwrap();
    assert_eq!(
        sweep.curve().point(2).unwrap().smape,
        run2.report().overall.smape_expert
    );
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("sweep_out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["results"]["argmin_smape"], sweep.curve().argmin_smape);
    assert!(dir.path().join("sweep_out/reports/k02.json").is_file());
}

#[test]
fn synth_then_run_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_setup(dir.path(), 50, json!({}));
    cmd_synth(&load(&cfg), None).unwrap();
    let csv_cfg = dir.path().join("csv_config.json");
    write_json(
        &csv_cfg,
        &json!({"input_csv": "out/dataset.csv", "out_dir": "from_csv", "train": {"epochs": 1, "hidden_width": 4},
            "clustering": {"k": 2}}),
    );
    let out = exec(&["run", "--config", csv_cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn constant_csv(path: &Path, sites: usize, days: usize, start: &str) {
    let start = parse_day(start).unwrap();
    let mut s = String::from("site_id,date,kwh\n");
    for i in 0..sites {
        for d in 0..days {
            s.push_str(&format!("s{i},{},100\n", format_day(start + d as i64)));
        }
    }
    fs::write(path, s).unwrap();
}

#[test]
fn predict_constant_site_with_constant_model() {
    let dir = tempfile::tempdir().unwrap();
    constant_csv(&dir.path().join("train.csv"), 5, 100, "2024-01-01");
    let cfg = dir.path().join("config.json");
    write_json(
        &cfg,
        &json!({"input_csv": "train.csv", "out_dir": "out",
            "train": {"epochs": 150, "batch_size": 32, "learning_rate": 0.003, "hidden_width": 16, "seed": 2},
            "clustering": {"k": 1}}),
    );
    cmd_run(&load(&cfg)).unwrap();

    // Exactly 28 days is the boundary case.
    let input = dir.path().join("site.csv");
    constant_csv(&input, 1, 28, "2024-05-01");
    let forecast = dir.path().join("forecast.csv");
    let p = cmd_predict(&dir.path().join("out/models"), &input, Some(&forecast)).unwrap();
    assert_eq!(p.rows.len(), 7);
    let last = parse_day("2024-05-28").unwrap();
    for (i, r) in p.rows.iter().enumerate() {
        assert_eq!(r.date, format_day(last + 1 + i as i64));
        assert!((r.kwh - 100.0).abs() < 1.0, "forecast {} on {}", r.kwh, r.date);
    }
    let text = fs::read_to_string(&forecast).unwrap();
    assert_eq!(text.lines().next(), Some("date,kwh_forecast"));
    assert!(text.lines().nth(1).unwrap().starts_with("2024-05-29,"));

    // Through the binary, reading the model location from the config.
    let out = exec(&[
        "predict",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 8);

    let short = dir.path().join("short.csv");
    constant_csv(&short, 1, 27, "2024-05-01");
    let out = exec(&[
        "predict",
        "--models",
        dir.path().join("out/models").to_str().unwrap(),
        "--input",
        short.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let two = dir.path().join("two.csv");
    constant_csv(&two, 2, 30, "2024-05-01");
    let e = cmd_predict(&dir.path().join("out/models"), &two, None).unwrap_err();
    assert!(matches!(e, CliError::Usage(_)));
}

#[test]
fn predict_without_artifacts_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("site.csv");
    constant_csv(&input, 1, 30, "2024-05-01");
    let models = dir.path().join("models");
    let out = exec(&[
        "predict",
        "--models",
        models.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    fs::create_dir_all(&models).unwrap();
    let out = exec(&[
        "predict",
        "--models",
        models.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_refuses_stale_layout() {
    let dir = tempfile::tempdir().unwrap();
    constant_csv(&dir.path().join("train.csv"), 5, 60, "2024-01-01");
    let cfg = dir.path().join("config.json");
    write_json(
        &cfg,
        &json!({"input_csv": "train.csv", "out_dir": "out", "train": {"epochs": 1, "hidden_width": 4},
            "clustering": {"k": 1}}),
    );
    cmd_run(&load(&cfg)).unwrap();
    let cm_path = dir.path().join("out/models/cluster_model.json");
    let mut cm: serde_json::Value = serde_json::from_slice(&fs::read(&cm_path).unwrap()).unwrap();
    cm["layout_version"] = json!("profile7/v0");
    write_json(&cm_path, &cm);
    let input = dir.path().join("site.csv");
    constant_csv(&input, 1, 30, "2024-05-01");
    let e = cmd_predict(&dir.path().join("out/models"), &input, None).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("layout"));
}
