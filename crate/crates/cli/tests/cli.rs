use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn greyguide(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_greyguide"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = greyguide(args);
    assert!(
        out.status.success(),
        "greyguide {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes a small synthetic corpus and a fast training config.
fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, r#"{"n": 40, "classes": 3, "d_emb": 6}"#).unwrap();
    let data = dir.join("data.ndjson");
    ok(&["synth", "--spec", s(&spec), "--seed", "3", "--out", s(&data)]);
    let config = dir.join("run.cfg");
    std::fs::write(
        &config,
        "# tiny model\nlr = 0.01\nepochs = 2\nbatch_size = 8\nrepeats = 2\nd_model = 4\nfilters_per_kernel = 1\n",
    )
    .unwrap();
    (data, config)
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let again = dir.path().join("again.ndjson");
    let spec = dir.path().join("spec.json");
    ok(&["synth", "--spec", s(&spec), "--seed", "3", "--out", s(&again)]);
    assert_eq!(std::fs::read(&data).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(lines(&data), 40);
}

#[test]
fn split_writes_three_parts() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let prefix = dir.path().join("parts");
    ok(&["split", "--input", s(&data), "--seed", "9", "--out-prefix", s(&prefix)]);
    let count = |suffix: &str| lines(&dir.path().join(format!("parts{suffix}")));
    assert_eq!(
        (count(".train.ndjson"), count(".test.ndjson"), count(".val.ndjson")),
        (32, 4, 4)
    );
}

#[test]
fn extract_train_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = fixture(dir.path());
    let cache = dir.path().join("gg.ndjson");
    ok(&["extract-gg", "--input", s(&data), "--order", "3", "--out", s(&cache)]);
    assert_eq!(lines(&cache), 40);
    let first: Value = serde_json::from_str(std::fs::read_to_string(&cache).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["gg"].as_array().unwrap().len(), 9);

    let ckpt = dir.path().join("model.json");
    ok(&[
        "train", "--input", s(&data), "--theme", "severity", "--variant", "dlgm4", "--config",
        s(&config), "--guidance", s(&cache), "--out", s(&ckpt),
    ]);
    let report = dir.path().join("eval.json");
    ok(&[
        "eval", "--ckpt", s(&ckpt), "--input", s(&data), "--theme", "severity", "--report",
        s(&report),
    ]);
    let r = json(&report);
    assert_eq!(r["records"], 40);
    assert_eq!(r["tags"]["variant"], "dlgm4");
    assert_eq!(r["metrics"]["confusion"].as_array().unwrap().len(), 5);
    let f1 = r["metrics"]["macro"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    // The checkpoint was trained for severity only.
    let out = greyguide(&[
        "eval", "--ckpt", s(&ckpt), "--input", s(&data), "--theme", "risk", "--report", s(&report),
    ]);
    assert!(!out.status.success());
}

#[test]
fn sweep_reports_one_row_per_order() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = fixture(dir.path());
    let report = dir.path().join("sweep.json");
    ok(&[
        "sweep-n", "--input", s(&data), "--theme", "possibility", "--min", "1", "--max", "3",
        "--config", s(&config), "--report", s(&report),
    ]);
    let rows = json(&report)["rows"].as_array().unwrap().clone();
    let widths: Vec<u64> = rows.iter().map(|r| r["guidance_width"].as_u64().unwrap()).collect();
    assert_eq!(widths, vec![5, 7, 9]);
}

#[test]
fn run_reports_each_variant() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = fixture(dir.path());
    let report = dir.path().join("run.json");
    ok(&[
        "run", "--input", s(&data), "--theme", "risk", "--variants", "dlgm1,dlgm3", "--config",
        s(&config), "--report", s(&report),
    ]);
    let reports = json(&report);
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[1]["variant"], "dlgm3");
    assert_eq!(reports[0]["repeats"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = fixture(dir.path());
    let out = dir.path().join("x");
    for args in [
        vec!["train", "--input", s(&data), "--theme", "severity", "--variant", "dlgm9", "--out", s(&out)],
        vec!["train", "--input", "/nonexistent.ndjson", "--theme", "risk", "--variant", "dlgm1", "--out", s(&out)],
        vec!["split", "--input", s(&config), "--seed", "1", "--out-prefix", s(&out)],
        vec!["sweep-n", "--input", s(&data), "--theme", "risk", "--min", "4", "--max", "2", "--report", s(&out)],
    ] {
        assert!(!greyguide(&args).status.success(), "{args:?} should fail");
    }
    std::fs::write(&config, "lr = 0.01\nmystery = 1\n").unwrap();
    let out = greyguide(&[
        "train", "--input", s(&data), "--theme", "risk", "--variant", "dlgm1", "--config", s(&config),
        "--out", s(&out),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}
