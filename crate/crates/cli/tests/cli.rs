use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psclf_core::fixtures;
use serde_json::Value;
use tempfile::TempDir;

fn psclf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psclf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn put(dir: &TempDir, name: &str, contents: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, contents).unwrap();
    p.to_string_lossy().into_owned()
}

fn out_path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn json(p: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &str) -> Vec<Vec<f64>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

const UNSTABLE_SINGLE: &str = r#"{"dimension": 2, "subsystems": [{"kind": "linear", "A": [[0, 1], [1, -1]]}]}"#;
const IDENTITY_CLF: &str = r#"{"kind": "smooth_quadratic", "P": [[1, 0], [0, 1]]}"#;
const MINUS_IDENTITY: &str = r#"{"dimension": 2, "subsystems": [{"kind": "linear", "A": [[-1, 0], [0, -1]]}]}"#;

#[test]
fn simulate_ex1_relay_diverges() {
    let d = TempDir::new().unwrap();
    let sys = put(&d, "sys.json", fixtures::EX1_SYSTEM);
    let law = put(&d, "law.json", fixtures::EX1_REGION_LAW);
    let out = out_path(&d, "traj.csv");
    let o = psclf(&[
        "simulate",
        "--system",
        &sys,
        "--region-law",
        &law,
        "--x0",
        "0.5,-2",
        "--t-final",
        "5",
        "--step",
        "1e-4",
        "--hysteresis",
        "0.01",
        "--mode",
        "relay",
        "--divergence-bound",
        "100",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out);
    let norm = |r: &Vec<f64>| (r[1] * r[1] + r[2] * r[2]).sqrt();
    assert!(norm(rows.last().unwrap()) > 100.0);
    assert!(norm(rows.last().unwrap()) > 10.0 * norm(&rows[0]));
    assert!(Path::new(&format!("{out}.manifest.json")).exists());
}

#[test]
fn simulate_nonlinear_converges() {
    let d = TempDir::new().unwrap();
    let sys = put(&d, "sys.json", fixtures::NONLINEAR_SYSTEM);
    let clf = put(&d, "clf.json", fixtures::NONLINEAR_CLF);
    let out = out_path(&d, "traj.csv");
    let o = psclf(&[
        "simulate",
        "--system",
        &sys,
        "--clf",
        &clf,
        "--x0",
        "0,-1",
        "--t-final",
        "20",
        "--step",
        "1e-3",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let last = csv_rows(&out).pop().unwrap();
    assert!((last[1] * last[1] + last[2] * last[2]).sqrt() < 0.05);
}

#[test]
fn simulate_validation_errors() {
    let d = TempDir::new().unwrap();
    let sys = put(&d, "sys.json", fixtures::NONLINEAR_SYSTEM);
    let clf = put(&d, "clf.json", fixtures::NONLINEAR_CLF);
    let out = out_path(&d, "traj.csv");
    let o = psclf(&["simulate", "--system", &sys, "--clf", &clf, "--out", &out]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--x0"));

    let o = psclf(&[
        "simulate", "--system", &sys, "--clf", &clf, "--x0", "1,2,3", "--out", &out,
    ]);
    assert_eq!(code(&o), 1);
    let bad = put(&d, "bad.json", r#"{"dimension": 2, "subsystems": []}"#);
    let o = psclf(&[
        "simulate", "--system", &bad, "--clf", &clf, "--x0", "1,0", "--out", &out,
    ]);
    assert_eq!(code(&o), 1);
    let o = psclf(&[
        "simulate", "--system", &sys, "--clf", &clf, "--x0", "1,0", "--step", "-1", "--out", &out,
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn certify_exit_codes() {
    let d = TempDir::new().unwrap();
    let out = out_path(&d, "report.json");

    let sys = put(&d, "ex3.json", fixtures::EX3_SYSTEM);
    let clf = put(&d, "ex3_clf.json", fixtures::EX3_CLF);
    let o = psclf(&[
        "certify",
        "--system",
        &sys,
        "--clf",
        &clf,
        "--rate",
        "quadratic:1",
        "--checks",
        "sliding",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out)["reports"][0]["samples_used"], 100);
    // the decrease condition is violated on the x1 axis for this data
    let o = psclf(&[
        "certify",
        "--system",
        &sys,
        "--clf",
        &clf,
        "--checks",
        "psclf,cond12",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 3);
    assert_eq!(json(&out)["reports"][1]["verdict"], "pass");

    let sys = put(&d, "nl.json", fixtures::NONLINEAR_SYSTEM);
    let clf = put(&d, "nl_clf.json", fixtures::NONLINEAR_CLF);
    let o = psclf(&[
        "certify",
        "--system",
        &sys,
        "--clf",
        &clf,
        r#"--rate=polynomial:[{"coeff": 2, "exponents": [0, 2]}]"#,
        "--checks",
        "psclf",
        "--samples",
        "10000",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));

    let sys = put(&d, "unstable.json", UNSTABLE_SINGLE);
    let clf = put(&d, "eye.json", IDENTITY_CLF);
    let o = psclf(&[
        "certify",
        "--system",
        &sys,
        "--clf",
        &clf,
        "--checks",
        "psclf,completeness",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 3);
    let report = json(&out);
    assert!(!report["reports"][0]["checks"][3]["witnesses"]
        .as_array()
        .unwrap()
        .is_empty());

    let o = psclf(&[
        "certify", "--system", &sys, "--clf", &clf, "--checks", "bogus", "--out", &out,
    ]);
    assert_eq!(code(&o), 1);
    let o = psclf(&[
        "certify",
        "--system",
        &sys,
        "--clf",
        &clf,
        "--rate",
        "quadratic:-1",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 1);
    let o = psclf(&[
        "certify",
        "--system",
        &sys,
        "--clf",
        &clf,
        "--samples",
        "10",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn synthesize_exit_codes() {
    let d = TempDir::new().unwrap();
    let out = out_path(&d, "syn.json");
    let sys = put(&d, "saddle.json", fixtures::SADDLE_PAIR_SYSTEM);
    let o = psclf(&["synthesize-quadratic", "--system", &sys, "--grid", "100", "--out", &out]);
    assert_eq!(code(&o), 0);
    let w = json(&out)["weights"].clone();
    assert!((w[0].as_f64().unwrap() - 0.5).abs() <= 0.05 && (w[1].as_f64().unwrap() - 0.5).abs() <= 0.05);

    let sys = put(
        &d,
        "pos.json",
        r#"{"dimension": 2, "subsystems": [
        {"kind": "linear", "A": [[1, 0], [0, 1]]}, {"kind": "linear", "A": [[2, 0], [0, 2]]}]}"#,
    );
    let o = psclf(&["synthesize-quadratic", "--system", &sys, "--grid", "50", "--out", &out]);
    assert_eq!(code(&o), 5);
    assert_eq!(json(&out)["found"], false);

    let sys = put(&d, "single.json", MINUS_IDENTITY);
    let o = psclf(&["synthesize-quadratic", "--system", &sys, "--grid", "10", "--out", &out]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&out)["weights"], serde_json::json!([1.0]));

    let sys = put(&d, "nl.json", fixtures::NONLINEAR_SYSTEM);
    let o = psclf(&["synthesize-quadratic", "--system", &sys, "--out", &out]);
    assert_eq!(code(&o), 1);
}

#[test]
fn verify_bmi_exit_codes() {
    let d = TempDir::new().unwrap();
    let out = out_path(&d, "bmi.json");
    let sys = put(&d, "sys.json", MINUS_IDENTITY);
    let cert = |eta2: f64| {
        format!(
            r#"{{"P": [[[1, 0], [0, 1]]], "H": [[[0, 0], [0, 0]]], "eta1": 0.5, "eta2": {eta2},
                "zeta": [[[1]]], "alpha": [[1]]}}"#
        )
    };
    let good = put(&d, "good.json", &cert(0.5));
    let o = psclf(&["verify-bmi", "--system", &sys, "--certificate", &good, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bad = put(&d, "bad.json", &cert(3.0));
    let o = psclf(&["verify-bmi", "--system", &sys, "--certificate", &bad, "--out", &out]);
    assert_eq!(code(&o), 3);
    let o = psclf(&[
        "verify-bmi",
        "--system",
        &sys,
        "--certificate",
        &good,
        "--family",
        "pointwise-max",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 1);

    let max = put(
        &d,
        "max.json",
        r#"{"P": [[[1, 0], [0, 2]], [[2, 0], [0, 1]]], "eta1": 0.5, "eta2": 0.5,
            "zeta": [[[1, 0], [1, 0]]], "alpha": [[1, 1]]}"#,
    );
    let o = psclf(&[
        "verify-bmi",
        "--system",
        &sys,
        "--certificate",
        &max,
        "--family",
        "pointwise-max",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0);
}

#[test]
fn examples_meet_expectations() {
    let d = TempDir::new().unwrap();
    for name in ["ex1", "ex2", "ex3", "nonlinear"] {
        let dir = d.path().join(name);
        let o = psclf(&["example", name, "--out-dir", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let s = json(dir.join("summary.json").to_str().unwrap());
        assert_eq!(s["pass"], true);
        assert!(dir.join("system.json").exists());
    }
    let o = psclf(&["example", "ex9", "--out-dir", d.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

fn replay_is_identical(manifest: &Path, outputs: &[PathBuf]) {
    let before: Vec<Vec<u8>> = outputs.iter().map(|p| fs::read(p).unwrap()).collect();
    let manifest_before = fs::read(manifest).unwrap();
    for p in outputs {
        fs::remove_file(p).unwrap();
    }
    let o = psclf(&["replay", "--manifest", manifest.to_str().unwrap()]);
    assert!(code(&o) != 1, "{}", String::from_utf8_lossy(&o.stderr));
    for (p, b) in outputs.iter().zip(&before) {
        assert_eq!(&fs::read(p).unwrap(), b, "{}", p.display());
    }
    assert_eq!(fs::read(manifest).unwrap(), manifest_before);
}

#[test]
fn manifests_reproduce_outputs() {
    let d = TempDir::new().unwrap();
    let sys = put(&d, "sys.json", fixtures::NONLINEAR_SYSTEM);
    let clf = put(&d, "clf.json", fixtures::NONLINEAR_CLF);
    let out = out_path(&d, "traj.csv");
    let o = psclf(&[
        "simulate",
        "--system",
        &sys,
        "--clf",
        &clf,
        "--x0",
        "1,0",
        "--t-final",
        "2",
        "--mode",
        "filippov",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0);
    let manifest = PathBuf::from(format!("{out}.manifest.json"));
    let m = json(manifest.to_str().unwrap());
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config"]["sim"]["step"], 0.001);
    replay_is_identical(&manifest, &[PathBuf::from(&out)]);

    let sys = put(&d, "ex3.json", fixtures::EX3_SYSTEM);
    let clf = put(&d, "ex3_clf.json", fixtures::EX3_CLF);
    let out = out_path(&d, "report.json");
    psclf(&[
        "certify",
        "--system",
        &sys,
        "--clf",
        &clf,
        "--checks",
        "psclf,sliding,region",
        "--out",
        &out,
    ]);
    replay_is_identical(&PathBuf::from(format!("{out}.manifest.json")), &[PathBuf::from(&out)]);

    let dir = d.path().join("ex2");
    psclf(&["example", "ex2", "--out-dir", dir.to_str().unwrap()]);
    let outputs: Vec<PathBuf> = ["filippov.csv", "relay.csv", "summary.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    replay_is_identical(&dir.join("summary.json.manifest.json"), &outputs);
}

#[test]
fn floats_are_written_with_twelve_digits() {
    let d = TempDir::new().unwrap();
    let out = out_path(&d, "syn.json");
    let sys = put(&d, "saddle.json", fixtures::SADDLE_PAIR_SYSTEM);
    psclf(&["synthesize-quadratic", "--system", &sys, "--out", &out]);
    let text = fs::read_to_string(&out).unwrap();
    for token in text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == '-')) {
        let mantissa = token.trim_start_matches('-').split('e').next().unwrap();
        let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
        assert!(digits.trim_start_matches('0').len() <= 12, "{token}");
    }
}
