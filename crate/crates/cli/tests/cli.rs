use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use factorbreak::{simulate_dgp, BreakType, DGPConfig, Panel};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_factorbreak"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn factorbreak")
}

fn grid(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("grids")
        .join(name)
        .display()
        .to_string()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

/// Simulated panel written as CSV with quarterly labels and one header row.
fn panel_file(dir: &Path, break_type: BreakType, seed: u64) -> (PathBuf, Panel) {
    let (p, _) = simulate_dgp(&DGPConfig {
        n: 60,
        t: 160,
        break_type,
        seed,
        ..DGPConfig::default()
    })
    .unwrap();
    let labels = (0..p.t()).map(|i| format!("{}Q{}", 1970 + i / 4, i % 4 + 1)).collect();
    let panel = Panel::new(p.values().clone(), p.series_ids().to_vec(), labels).unwrap();
    let path = dir.join("panel.csv");
    panel.write_csv(fs::File::create(&path).unwrap()).unwrap();
    (path, panel)
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

#[test]
fn missing_break_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = panel_file(dir.path(), BreakType::None, 1);
    let out = run(&["test", "--input", input.to_str().unwrap(), "--factors", "3", "--header-rows", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "UsageError");
    assert!(err["message"].as_str().unwrap().contains("--break"));
}

#[test]
fn test_command_writes_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = panel_file(dir.path(), BreakType::Both, 2);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "test",
        "--input",
        input.to_str().unwrap(),
        "--header-rows",
        "1",
        "--break",
        "1989Q4",
        "--factors",
        "3",
        "--reps",
        "100",
        "--seed",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("trace ratio"));

    let report = read_json(out_dir.join("report.json"));
    assert_eq!(report["k"], 80);
    assert_eq!(report["break_label"], "1989Q4");
    assert!(report["trace_ci"]["lower"].as_f64().unwrap() <= report["trace_ci"]["upper"].as_f64().unwrap());
    assert!(report["holm_adjusted"][1].as_f64().unwrap() < 0.05);

    let manifest = read_json(out_dir.join("manifest.json"));
    assert_eq!(manifest["command"], "test");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["library_version"], factorbreak::VERSION);
    assert_eq!(manifest["settings"]["bootstrap"]["replications"], 100);
    for f in ["report.json", "series.csv", "summary.txt", "decomposition.csv", "manifest.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let series = fs::read_to_string(out_dir.join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), 61);
}

#[test]
fn unequal_factor_counts_take_rectangular_path() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = panel_file(dir.path(), BreakType::None, 3);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "test",
        "--input",
        input.to_str().unwrap(),
        "--header-rows",
        "1",
        "--break",
        "80",
        "--factors",
        "2,4",
        "--reps",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(out_dir.join("report.json"));
    assert_eq!(report["swapped"], true);
    assert_eq!((report["r1"].as_u64(), report["r2"].as_u64()), (Some(2), Some(4)));
    let notes: Vec<&str> = report["notes"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(notes.iter().any(|n| n.contains("rectangular")), "{notes:?}");
    assert!(report["trace_ci"].is_null());
}

#[test]
fn config_file_supplies_settings() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = panel_file(dir.path(), BreakType::None, 4);
    let cfg = dir.path().join("test.toml");
    fs::write(&cfg, "level = 0.1\nwith_lm = false\n[hac]\nbandwidth = 2\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "test",
        "--input",
        input.to_str().unwrap(),
        "--header-rows",
        "1",
        "--break",
        "1989Q4",
        "--factors",
        "3",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(out_dir.join("report.json"));
    assert_eq!(report["level"], 0.1);
    assert!(report["z_lm_result"].is_null());
    assert_eq!(report["z_result"]["bandwidths"], serde_json::json!([2, 2]));
}

#[test]
fn simulate_smoke_grid_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let render = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let start = Instant::now();
        let out = run(&["simulate", "--grid", &grid("smoke.toml"), "--seed", "7", "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(start.elapsed().as_secs_f64() < 10.0);
        fs::read(out_dir.join("table.csv")).unwrap()
    };
    let a = render("a");
    let b = render("b");
    assert_eq!(a, b);
    let manifest = read_json(dir.path().join("a").join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["settings"]["cell"][1]["seed"], 8);
}

#[test]
fn bundled_table_grids_have_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("t1");
    let out = run(&["simulate", "--grid", &grid("table1.toml"), "--reps", "5", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 9);
    assert!(table.lines().skip(1).all(|l| l.starts_with("NONE,200,")));

    let text = fs::read_to_string(grid("table2.toml")).unwrap();
    let parsed: toml::Value = toml::from_str(&text).unwrap();
    assert_eq!(parsed["cell"].as_array().unwrap().len(), 12);
}

#[test]
fn invalid_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[[cell]]\nbreak_type = \"SIDEWAYS\"\n").unwrap();
    let out = run(&["simulate", "--grid", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "ConfigError");

    fs::write(&bad, "[[cell]]\nrho = 1.5\n").unwrap();
    let out = run(&["simulate", "--grid", bad.to_str().unwrap(), "--reps", "10", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bootstrap_ci_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = panel_file(dir.path(), BreakType::ZOnly, 5);
    let ci = |sub: &str, seed: &str| {
        let out_dir = dir.path().join(sub);
        let out = run(&[
            "bootstrap-ci",
            "--input",
            input.to_str().unwrap(),
            "--header-rows",
            "1",
            "--break",
            "1989Q4",
            "--factors",
            "3",
            "--reps",
            "100",
            "--seed",
            seed,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(out_dir.join("ci.json")).unwrap()
    };
    assert_eq!(ci("a", "1"), ci("b", "1"));
    assert_ne!(ci("a", "1"), ci("c", "2"));
}

#[test]
fn r2_report_by_category() {
    let dir = tempfile::tempdir().unwrap();
    let (input, panel) = panel_file(dir.path(), BreakType::WOnly, 6);
    let cats = dir.path().join("cats.csv");
    let mut text = String::from("series_id,category\n");
    for (i, id) in panel.series_ids().iter().enumerate() {
        text.push_str(&format!("{id},{}\n", if i < 30 { "first" } else { "second" }));
    }
    fs::write(&cats, &text).unwrap();
    let out_dir = dir.path().join("out");
    let args = |cats: &Path| {
        vec![
            "r2-report".to_string(),
            "--input".into(),
            input.display().to_string(),
            "--header-rows".into(),
            "1".into(),
            "--break".into(),
            "1989Q4".into(),
            "--factors".into(),
            "3".into(),
            "--categories".into(),
            cats.display().to_string(),
            "--out".into(),
            out_dir.display().to_string(),
        ]
    };
    let out = bin().args(args(&cats)).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("r2_categories.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "category,series,unrestricted,restricted,gap");
    for line in lines {
        let gap: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(gap > 0.05, "{line}");
    }
    assert_eq!(fs::read_to_string(out_dir.join("r2_series.csv")).unwrap().lines().count(), 61);

    let short = dir.path().join("short.csv");
    fs::write(&short, text.lines().take(20).collect::<Vec<_>>().join("\n")).unwrap();
    let out = bin().args(args(&short)).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "MappingError");
}

#[test]
fn ingest_applies_codes_and_window() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.csv");
    let mut text = String::from("date,a,b\ntransform,5,2\n");
    for i in 0..40 {
        let x = 100.0 * (1.0 + 0.01 * i as f64 + 0.003 * ((i * 7) % 5) as f64);
        let y = ((i * 13) % 11) as f64;
        text.push_str(&format!("{}Q{},{x},{y}\n", 2000 + i / 4, i % 4 + 1));
    }
    fs::write(&input, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "ingest",
        "--input",
        input.to_str().unwrap(),
        "--window",
        "2001Q1,2008Q4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(out_dir.join("ingest.json"));
    assert_eq!(summary["t"], 32);
    assert_eq!(summary["first_period"], "2001Q1");
    assert_eq!(summary["standardized"], true);
    let panel = fs::read_to_string(out_dir.join("panel.csv")).unwrap();
    assert_eq!(panel.lines().count(), 33);
}

#[test]
fn constant_series_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("flat.csv");
    let mut text = String::from("date,a,b,c\n");
    for i in 0..30 {
        text.push_str(&format!("{i},{},{},1.0\n", i % 7, (i * 3) % 5));
    }
    fs::write(&input, text).unwrap();
    let out = run(&["ingest", "--input", input.to_str().unwrap(), "--header-rows", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "DegenerateSeries");
}

#[test]
fn missing_input_file_is_reported() {
    let out = run(&["ingest", "--input", "/nonexistent/panel.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "IoError");
}
