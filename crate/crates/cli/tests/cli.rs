use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL_TRAIN: &str = r#""train": {"hidden": [16, 16], "epochs": 60}"#;

fn nccqr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nccqr"))
        .args(args)
        .current_dir(dir)
        .env_remove("NCCQR_OUT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn failed(out: &Output) -> String {
    assert!(!out.status.success(), "command unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    write(
        dir,
        "cfg.json",
        &format!(r#"{{"data": {{"synthetic": {{"model": "sine", "n": 200, "test_size": 300}}}}, {SMALL_TRAIN}{extra}}}"#),
    )
}

#[test]
fn simulate_writes_requested_rows_reproducibly() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.json", r#"{"data": {"synthetic": {"model": "sine", "n": 2000}}, "seed": 1}"#);
    for out in ["a", "b"] {
        ok(&nccqr(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out], dir.path()));
    }
    let a = std::fs::read(dir.path().join("a/data.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/data.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 2001);
    assert_eq!(text.lines().next().unwrap(), "x1,y");
    let meta = read_json(&dir.path().join("a/simulate.json"));
    assert_eq!(meta["rows"], 2000);
    assert_eq!(meta["provenance"]["seeds"], serde_json::json!([1]));
    assert_eq!(meta["provenance"]["config"]["data"]["synthetic"]["n"], 2000);
}

#[test]
fn seed_flag_changes_data() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.json", r#"{"data": {"synthetic": {"model": "triangle", "error": "exp", "n": 50}}}"#);
    ok(&nccqr(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "a"], dir.path()));
    ok(&nccqr(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "b", "--seed", "5"], dir.path()));
    let a = std::fs::read(dir.path().join("a/data.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/data.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn bad_model_name_reports_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"data": {"synthetic": {"model": "cosine", "n": 10}}}"#);
    let err = failed(&nccqr(&["simulate", "--config", cfg.to_str().unwrap()], dir.path()));
    assert!(err.contains("data.synthetic.model"), "{err}");
    let cfg = write(dir.path(), "typo.json", r#"{"data": {"synthetic": {"model": "sine", "n": 10}}, "sede": 3}"#);
    let err = failed(&nccqr(&["simulate", "--config", cfg.to_str().unwrap()], dir.path()));
    assert!(err.contains("sede"), "{err}");
}

#[test]
fn output_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.json", r#"{"data": {"synthetic": {"model": "sine", "n": 10}}}"#);
    let out = Command::new(env!("CARGO_BIN_EXE_nccqr"))
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .current_dir(dir.path())
        .env("NCCQR_OUT", "from-env")
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("from-env/data.csv").exists());
}

#[test]
fn fit_calibrate_then_evaluate() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), "");
    ok(&nccqr(&["fit-calibrate", "--config", cfg.to_str().unwrap(), "--out", "fit"], dir.path()));
    let band = read_json(&dir.path().join("fit/band.json"));
    assert!(band["q_hat"].is_number());
    assert_eq!(band["model"]["kind"], "neural");
    assert_eq!(band["calib_size"], 100);
    assert!(band["provenance"]["fit"]["lambda"].as_f64().unwrap() > 0.0);
    let trace = std::fs::read_to_string(dir.path().join("fit/trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,objective\n"));
    assert!(trace.lines().count() > 2);

    ok(&nccqr(&["evaluate", "--band", "fit/band.json", "--out", "eval"], dir.path()));
    let report = read_json(&dir.path().join("eval/report.json"));
    for key in ["coverage", "avg_length", "cr_nn", "cr_ci", "q_hat", "oracle_gap", "n_test"] {
        assert!(!report["report"][key].is_null(), "missing {key}");
    }
    assert_eq!(report["report"]["n_test"], 300);
    let dump = std::fs::read_to_string(dir.path().join("eval/intervals.csv")).unwrap();
    assert_eq!(dump.lines().next().unwrap(), "x1,y,lo,hi");
    assert_eq!(dump.lines().count(), 301);
}

#[test]
fn embedded_config_reproduces_band() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), r#", "seed": 3"#);
    ok(&nccqr(&["fit-calibrate", "--config", cfg.to_str().unwrap(), "--out", "a"], dir.path()));
    let band = read_json(&dir.path().join("a/band.json"));
    let embedded = serde_json::to_string(&band["provenance"]["config"]).unwrap();
    let again = write(dir.path(), "again.json", &embedded);
    ok(&nccqr(&["fit-calibrate", "--config", again.to_str().unwrap(), "--out", "b"], dir.path()));
    let first = std::fs::read(dir.path().join("a/band.json")).unwrap();
    let second = std::fs::read(dir.path().join("b/band.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn qr_method_gives_linear_band() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), "");
    ok(&nccqr(
        &["fit-calibrate", "--config", cfg.to_str().unwrap(), "--method", "qr", "--out", "qr"],
        dir.path(),
    ));
    let band = read_json(&dir.path().join("qr/band.json"));
    assert_eq!(band["model"]["kind"], "linear");
    assert!(band["model"]["linear"]["lower"]["slope"].is_array());
    assert_eq!(band["provenance"]["config"]["method"], "qr");
}

#[test]
fn calibration_overflow_is_reported() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "tiny.json",
        &format!(
            r#"{{"data": {{"synthetic": {{"model": "sine", "n": 20, "test_size": 5}}}},
               "split": {{"counts": {{"train": 15, "calib": 5, "test": 5}}}}, {SMALL_TRAIN}}}"#
        ),
    );
    let err = failed(&nccqr(&["fit-calibrate", "--config", cfg.to_str().unwrap(), "--method", "qr"], dir.path()));
    assert!(err.contains("order statistic index 6 exceeds 5 scores"), "{err}");
}

#[test]
fn missing_band_fails() {
    let dir = TempDir::new().unwrap();
    let err = failed(&nccqr(&["evaluate", "--band", "nope.json"], dir.path()));
    assert!(err.contains("nope.json"), "{err}");
}

#[test]
fn oracle_band_covers_nominal_fraction() {
    let dir = TempDir::new().unwrap();
    // y = 1 + 2x + N(0, 1); the band [f_.05, f_.95] is exact.
    let mut csv = String::from("x1,y\n");
    let mut state = 12345u64;
    let mut unif = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    };
    for _ in 0..4000 {
        let x = unif();
        let z = (-2.0 * unif().ln()).sqrt() * (2.0 * std::f64::consts::PI * unif()).cos();
        csv.push_str(&format!("{x},{}\n", 1.0 + 2.0 * x + z));
    }
    write(dir.path(), "test.csv", &csv);
    let z = 1.6448536269514722;
    let band = serde_json::json!({
        "format": "nccqr-band", "version": 1, "alpha": 0.1, "q_hat": 0.0, "calib_size": 100,
        "model": {
            "kind": "linear",
            "levels": {"tau1": 0.05, "tau2": 0.95},
            "scaler": {"mean": [0.0], "sd": [1.0]},
            "response": {"shift": 0.0, "scale": 1.0},
            "linear": {"lower": {"intercept": 1.0 - z, "slope": [2.0]}, "upper": {"intercept": 1.0 + z, "slope": [2.0]}}
        }
    });
    write(dir.path(), "band.json", &band.to_string());
    let cfg = write(dir.path(), "cfg.json", r#"{"data": {"csv": {"path": "test.csv", "target": "y"}}}"#);
    ok(&nccqr(
        &["evaluate", "--band", "band.json", "--config", cfg.to_str().unwrap(), "--data", "test.csv", "--out", "ev"],
        dir.path(),
    ));
    let report = read_json(&dir.path().join("ev/report.json"));
    let cov = report["report"]["coverage"].as_f64().unwrap();
    assert!((cov - 0.9).abs() < 0.02, "coverage {cov}");
    assert!((report["report"]["avg_length"].as_f64().unwrap() - 2.0 * z).abs() < 1e-9);
}

#[test]
fn cv_lambda_writes_table() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), r#", "cv": {"k": 3, "grid": [0.0, 2.0]}"#);
    let stdout = ok(&nccqr(&["cv-lambda", "--config", cfg.to_str().unwrap(), "--out", "cv"], dir.path()));
    assert!(stdout.contains("selected lambda"));
    let table = std::fs::read_to_string(dir.path().join("cv/cv.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "lambda,mean_alc,fold1,fold2,fold3");
    assert_eq!(lines.len(), 3);
    let meta = read_json(&dir.path().join("cv/cv.json"));
    let chosen = meta["lambda_hat"].as_f64().unwrap();
    assert!(chosen == 0.0 || chosen == 2.0);
}

#[test]
fn evaluate_replications_summarizes() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), r#", "replications": 2, "method": "qr""#);
    ok(&nccqr(&["evaluate", "--config", cfg.to_str().unwrap(), "--out", "rep"], dir.path()));
    let s = read_json(&dir.path().join("rep/summary.json"));
    assert_eq!(s["summary"]["seeds"], serde_json::json!([0, 1]));
    assert_eq!(s["summary"]["runs"].as_array().unwrap().len(), 2);
    assert_eq!(s["summary"]["sd_defined"], true);
}

#[test]
fn unknown_table_is_rejected() {
    let dir = TempDir::new().unwrap();
    let err = failed(&nccqr(&["reproduce-table", "S9"], dir.path()));
    assert!(err.contains("S9"), "{err}");
}

#[test]
fn table_s3_from_csv_list() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("a,b,id,price\n");
    for i in 0..120 {
        let a = (i as f64 * 0.37).sin();
        let b = (i % 7) as f64;
        csv.push_str(&format!("{a},{b},{i},{}\n", 3.0 * a + b + 0.1 * ((i * 13 % 11) as f64)));
    }
    write(dir.path(), "houses.csv", &csv);
    let cfg = write(
        dir.path(),
        "t.json",
        &format!(r#"{{"datasets": [{{"name": "toy", "path": "houses.csv", "target": "price", "drop": ["id"]}}], {SMALL_TRAIN}}}"#),
    );
    let stdout = ok(&nccqr(
        &["reproduce-table", "S3", "--scale", "0.1", "--config", cfg.to_str().unwrap(), "--out", "t"],
        dir.path(),
    ));
    assert!(stdout.contains("CR-NN"));
    for m in ["NC-CQR", "CQR", "QR"] {
        assert!(stdout.contains(m));
    }
    let record = read_json(&dir.path().join("t/table_S3.json"));
    assert_eq!(record["replications"], 1);
    assert_eq!(record["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn table_s3_requires_datasets() {
    let dir = TempDir::new().unwrap();
    let err = failed(&nccqr(&["reproduce-table", "S3"], dir.path()));
    assert!(err.contains("datasets"), "{err}");
}
