use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn tvpgamp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvpgamp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = tvpgamp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(args: &[&str]) -> i32 {
    tvpgamp(args).status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["simulate", "--kind", "randomWalk", "--T", "60", "--seed", "3", "--reps", "2", "--out", s(out)]);
    }
    for f in ["sim_rep0.csv", "sim_rep1.csv", "sim_rep1_meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("sim_rep0.csv")).unwrap(), fs::read(a.join("sim_rep1.csv")).unwrap());
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["artifacts"]["sim_rep0.csv"]["sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = s(dir.path());
    assert_eq!(code(&["simulate", "--kind", "ar4", "--reps", "0", "--out", out]), 2);
    assert_eq!(code(&["simulate", "--out", out]), 2);
    assert_eq!(code(&["simulate", "--kind", "nope", "--out", out]), 2);
    assert_eq!(code(&["--threads", "0", "simulate", "--kind", "ar4", "--out", out]), 2);
    assert_eq!(code(&["fit", "--data", "/no/such/file.csv", "--out", out]), 2);
    assert_eq!(code(&["evaluate", "--forecasts", "/no/such.csv", "--out", out]), 2);
}

#[test]
fn malformed_fit_input_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "y,x1\n1.0,abc\n").unwrap();
    assert_eq!(code(&["fit", "--data", s(&data), "--out", s(&dir.path().join("o"))]), 3);
}

#[test]
fn fit_on_zero_target_gives_zero_path() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("zero.csv");
    let mut text = String::from("t,y,x1,x2\n");
    for t in 0..30 {
        text += &format!("{t},0,{},{}\n", (t as f64 * 0.7).sin(), 1.0 + 0.1 * t as f64);
    }
    fs::write(&data, text).unwrap();
    let out = dir.path().join("fit");
    ok(&["fit", "--data", s(&data), "--out", s(&out)]);
    let path = fs::read_to_string(out.join("beta_path.csv")).unwrap();
    let mut lines = path.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2");
    for line in lines {
        for cell in line.split(',').skip(1) {
            assert_eq!(cell.parse::<f64>().unwrap(), 0.0);
        }
    }
    let summary = json(&out.join("summary.json"));
    assert!(summary["iterations"].as_u64().unwrap() >= 1);
    assert_eq!(summary["observations"], 30);
    assert!(out.join("trace.csv").exists() && out.join("volatility.csv").exists());
}

fn write_forecasts(path: &Path, rows: &[(&str, &str, f64, f64, f64)]) {
    let mut text = String::from("origin,target,point,variance,realized\n");
    for (o, t, p, v, r) in rows {
        text += &format!("{o},{t},{p},{v},{r}\n");
    }
    fs::write(path, text).unwrap();
}

#[test]
fn evaluate_perfect_and_paired_forecasts() {
    let dir = TempDir::new().unwrap();
    let dates = [("2001-01-01", "2001-02-01"), ("2001-02-01", "2001-03-01"), ("2001-03-01", "2001-04-01")];
    let perfect: Vec<_> = dates.iter().enumerate().map(|(i, (o, t))| (*o, *t, i as f64, 1.0, i as f64)).collect();
    let noisy: Vec<_> = dates
        .iter()
        .enumerate()
        .map(|(i, (o, t))| (*o, *t, i as f64 + 0.5 * (i + 1) as f64, 1.0, i as f64))
        .collect();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_forecasts(&a, &perfect);
    write_forecasts(&b, &noisy);

    let solo = dir.path().join("solo");
    ok(&["evaluate", "--forecasts", s(&a), "--out", s(&solo)]);
    let m = json(&solo.join("metrics.json"));
    assert_eq!(m["metrics"]["msfe"], 0.0);
    assert_eq!(m["horizon"], 1);
    assert!(m["metrics"].get("dmStatistic").is_none());

    let pair = dir.path().join("pair");
    ok(&["evaluate", "--forecasts", s(&a), "--benchmark", s(&b), "--out", s(&pair)]);
    let m = json(&pair.join("metrics.json"));
    assert!(m["metrics"]["dmStatistic"].as_f64().unwrap() < 0.0);
    assert_eq!(m["metrics"]["msfeRelativeToAr2"], 0.0);
    let cum = fs::read_to_string(pair.join("cumsfe.csv")).unwrap();
    assert_eq!(cum.lines().count(), 4);
}

#[test]
fn benchmark_columns_and_thread_invariance() {
    let dir = TempDir::new().unwrap();
    let mut hashes = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        ok(&[
            "--threads", threads, "benchmark", "--kind", "sparseRegression", "--T", "50", "--p", "40", "--rho", "0.3",
            "--c", "0.05", "--reps", "6", "--estimators", "gamp_sbl,ols_per_predictor", "--out", s(&out),
        ]);
        let ad = fs::read_to_string(out.join("ad.csv")).unwrap();
        assert_eq!(ad.lines().next().unwrap(), "rep,estimator,ad,seconds");
        assert_eq!(ad.lines().count(), 1 + 12);
        assert!(out.join("timing.csv").exists());
        hashes.push(json(&out.join("manifest.json"))["artifacts"]["ad.csv"]["sha256"].clone());
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn forecast_writes_finite_metrics() {
    let dir = TempDir::new().unwrap();
    let panel = dir.path().join("panel.csv");
    let mut text = String::from("date,CPI,A,B,C\ntransform,5,1,2,5\n");
    let mut cpi = 100.0f64;
    for t in 0..96 {
        let x = t as f64;
        let a = (x * 0.3).sin();
        cpi *= ((2.0 + a + 0.3 * (x * 1.7).cos()) / 1200.0).exp();
        text += &format!(
            "{}-{:02}-01,{cpi},{a},{},{}\n",
            1990 + t / 12,
            t % 12 + 1,
            (x * 0.11).cos() * 3.0 + 0.01 * x,
            50.0 * (0.002 * x + 0.01 * (x * 0.5).sin()).exp()
        );
    }
    fs::write(&panel, text).unwrap();
    let out = dir.path().join("fc");
    ok(&[
        "forecast", "--panel", s(&panel), "--price", "CPI", "--horizon", "1", "--model", "constGamp", "--factors",
        "2", "--out", s(&out),
    ]);
    let m = json(&out.join("metrics.json"));
    for key in ["msfe", "logApl", "msfeRelativeToAr2", "logAplSpreadVsAr2", "dmStatistic"] {
        assert!(m["metrics"][key].as_f64().unwrap().is_finite(), "{key}");
    }
    let forecasts = fs::read_to_string(out.join("forecasts.csv")).unwrap();
    assert_eq!(forecasts.lines().next().unwrap(), "origin,target,point,variance,realized");
    assert!(out.join("benchmark_forecasts.csv").exists());
}
