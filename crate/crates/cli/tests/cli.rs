use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn wctsv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wctsv")).args(args).env_remove("WCTSV_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn sample_prices() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_prices.csv")
}

fn first_line_value(o: &Output) -> f64 {
    stdout(o).lines().next().unwrap().parse().unwrap()
}

#[test]
fn wc_prints_values_and_regimes() {
    let o = wctsv(&["wc", "--mu", "1", "--sigma", "2", "--t", "0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(first_line_value(&o), 5.0);
    assert!(stdout(&o).contains("regime:"));

    let o = wctsv(&["wc", "--mu", "0", "--sigma", "1", "--t", "-0.5", "--family", "symmetric"]);
    assert_eq!(first_line_value(&o), 1.125);

    let o = wctsv(&["wc", "--mu", "0", "--sigma", "1", "--t", "1", "--family", "symmetric", "--measure", "regret"]);
    assert_eq!(first_line_value(&o), 0.125);

    let o = wctsv(&["wc", "--mu", "0", "--sigma", "2.5", "--t", "-0.8", "--lambda", "1", "--family", "symmetric"]);
    assert!((first_line_value(&o) - 5.445).abs() <= 1e-12);
}

#[test]
fn wc_json_carries_the_inputs() {
    let o =
        wctsv(&["wc", "--mu", "0", "--sigma", "0.4", "--t", "0.5", "--lambda", "1", "--family", "symmetric", "--json"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.08).abs() <= 1e-12);
    assert_eq!(v["inputs"]["sigma"], 0.4);
    assert_eq!(v["inputs"]["lambda"], 1.0);
    assert_eq!(v["inputs"]["family"], "symmetric");
    assert_eq!(v["inputs"]["measure"], "tsv");
    assert!(v["regime"].is_string());
}

#[test]
fn wc_exit_codes() {
    // Empty set: budget below (mu - t)_-.
    assert_eq!(code(&wctsv(&["wc", "--mu", "0", "--sigma", "1", "--t", "1", "--lambda", "0.5"])), 1);
    assert_eq!(code(&wctsv(&["wc", "--mu", "0", "--sigma", "0", "--t", "1"])), 2);
    assert_eq!(code(&wctsv(&["wc", "--mu", "-1", "--sigma", "1", "--t", "0", "--family", "nonnegative"])), 2);
    assert_eq!(code(&wctsv(&["wc", "--mu", "0", "--sigma", "1"])), 2);
    assert_eq!(
        code(&wctsv(&["wc", "--mu", "0", "--sigma", "1", "--t", "0", "--lambda", "1", "--measure", "regret"])),
        2
    );
}

#[test]
fn verify_passes_and_catches_a_corrupted_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let grid = "mu=0:1:2; sigma=0.5:1:2; tz=-1:1:3";
    let o = wctsv(&["verify", "--grid-spec", grid, "--budget", "10000", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(&out).unwrap().lines().count();
    assert_eq!(rows, 1 + 12);

    let o = wctsv(&[
        "verify",
        "--grid-spec",
        grid,
        "--budget",
        "10000",
        "--out",
        out.to_str().unwrap(),
        "--corrupt-closed-form",
    ]);
    assert_eq!(code(&o), 1);

    assert_eq!(code(&wctsv(&["verify", "--budget", "0"])), 2);
    assert_eq!(code(&wctsv(&["verify", "--grid-spec", "mu=1", "--out", out.to_str().unwrap()])), 2);
}

/// Five prices whose four losses have means (0, 0.01) and sample covariance
/// 1e-4 I.
fn mv_toy_prices(dir: &Path) -> PathBuf {
    let a = 0.01 * 0.75f64.sqrt();
    let losses = [[a, 0.01 + a], [-a, 0.01 + a], [a, 0.01 - a], [-a, 0.01 - a]];
    let mut v = [100.0, 100.0];
    let mut csv = String::from("date,A,B\n2024-01-01,100,100\n");
    for (k, l) in losses.iter().enumerate() {
        for i in 0..2 {
            v[i] *= 1.0 - l[i];
        }
        csv.push_str(&format!("2024-01-0{},{},{}\n", k + 2, v[0], v[1]));
    }
    let prices = dir.join("toy.csv");
    std::fs::write(&prices, csv).unwrap();
    std::fs::write(dir.join("toy.conf"), "window = 4\nridge = 0\nnu = 0.003\n").unwrap();
    prices
}

#[test]
fn optimize_mv_toy() {
    let dir = tempfile::tempdir().unwrap();
    let prices = mv_toy_prices(dir.path());
    let conf = dir.path().join("toy.conf");
    let o =
        wctsv(&["optimize", "--prices", prices.to_str().unwrap(), "--config", conf.to_str().unwrap(), "--model", "MV"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let w: Vec<f64> = v["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((w[0] - 0.7).abs() <= 1e-9 && (w[1] - 0.3).abs() <= 1e-9, "{w:?}");
    assert!((v["expected_loss"].as_f64().unwrap() - 0.003).abs() <= 1e-12);
    assert_eq!(v["model"], "MV");

    let o = wctsv(&[
        "optimize",
        "--prices",
        prices.to_str().unwrap(),
        "--config",
        conf.to_str().unwrap(),
        "--model",
        "XYZ",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn frontier_reports_the_vertex() {
    let dir = tempfile::tempdir().unwrap();
    let prices = mv_toy_prices(dir.path());
    let conf = dir.path().join("toy.conf");
    let o =
        wctsv(&["frontier", "--prices", prices.to_str().unwrap(), "--config", conf.to_str().unwrap(), "--points", "5"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["vertex"].as_f64().unwrap() - 0.005).abs() <= 1e-12);
    assert_eq!(v["curve"].as_array().unwrap().len(), 5);
}

#[test]
fn backtest_writes_both_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = wctsv(&["backtest", "--prices", sample_prices().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let wealth = std::fs::read_to_string(out.join("wealth.csv")).unwrap();
    assert_eq!(wealth.lines().count(), 1 + 755 * 5);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 5);
}

#[test]
fn missing_or_malformed_inputs_exit_2() {
    let o = wctsv(&["backtest", "--prices", "/nonexistent/prices.csv"]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "date,A\n2024-01-01,abc\n2024-01-02,1\n").unwrap();
    assert_eq!(code(&wctsv(&["optimize", "--prices", bad.to_str().unwrap(), "--model", "MV"])), 2);
}

#[test]
fn seed_comes_from_the_environment_when_set() {
    let prices = sample_prices();
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_wctsv"));
        c.args(["optimize", "--prices", prices.to_str().unwrap(), "--model", "EEP-TSV-S"]);
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        match env {
            Some(s) => c.env("WCTSV_SEED", s),
            None => c.env_remove("WCTSV_SEED"),
        };
        c.output().unwrap()
    };
    let by_flag = run(None, Some("3"));
    let by_env = run(Some("3"), Some("9"));
    assert_eq!(code(&by_flag), 0);
    assert_eq!(by_flag.stdout, by_env.stdout);
    assert_eq!(code(&run(Some("not-a-seed"), None)), 2);
}
