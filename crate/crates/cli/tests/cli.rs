use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
synth_hours = 1200
test_hours = 240
val_hours = 240

[model]
lstm_hidden = 4
conv_ae = { hidden = 4, latent = 2 }
fc_ae = { hidden = 4, latent = 2 }

[train]
epochs = 2
train_windows = 16
batch_size = 8
val_stride = 24
phase1_iters = 1
phase2_iters = 2
seeds = [0, 1]
"#;

fn windassim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_windassim"))
        .args(args)
        .env_remove("WINDASSIM_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = windassim(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn synth_writes_requested_hours() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["synth", "--hours", "48", "--seed", "3", "--out", s(&a)]);
    ok(&["synth", "--hours", "48", "--seed", "3", "--out", s(&b)]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 49);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn default_config_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("default.toml");
    fs::write(&path, ok(&["default-config"])).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.contains("lambda_p = 1.5"));
    assert!(text.contains("baseline_pb = 0.95"));
}

#[test]
fn unknown_model_is_rejected() {
    let out = windassim(&["train", "--model", "kalman"]);
    assert!(!out.status.success());
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let runs = dir.path().join("runs");
    let printed = ok(&["train", "--config", s(&cfg), "--model", "varnet-upa", "--seeds", "0..1", "--out", s(&runs)]);
    assert_eq!(printed.lines().count(), 2);
    let model_dir = runs.join("varnet-upa");
    for f in ["seed-0.ckpt", "seed-1.ckpt", "seed-0-phase1.ckpt", "seed-0-phase2-curve.csv", "manifest.json"] {
        assert!(model_dir.join(f).exists(), "{f} missing");
    }
    let c0 = model_dir.join("seed-0.ckpt");
    let c1 = model_dir.join("seed-1.ckpt");

    let eval_both = runs.join("eval-both");
    let table = ok(&["eval", "--checkpoints", s(&c0), s(&c1), "--out", s(&eval_both)]);
    assert!(table.contains("n-Median"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(eval_both.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["per_seed_rmse"].as_array().unwrap().len(), 2);
    let profile = fs::read_to_string(eval_both.join("hourly_profile.csv")).unwrap();
    assert_eq!(profile.lines().count(), 25);
    let scatter = fs::read_to_string(eval_both.join("scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count() as u64, report["test_hours"].as_u64().unwrap() + 1);

    let eval_one = runs.join("eval-one");
    ok(&["eval", "--checkpoints", s(&c0), "--out", s(&eval_one)]);
    let single: serde_json::Value = serde_json::from_slice(&fs::read(eval_one.join("report.json")).unwrap()).unwrap();
    let nmed = single["n_median_rmse"].as_f64().unwrap();
    assert_eq!(nmed, single["per_seed_rmse"][0].as_f64().unwrap());
    assert!(single["std_rmse"].is_null());

    let eval_pb = runs.join("eval-pb");
    ok(&["eval", "--checkpoints", s(&c0), "--baseline-pb", &nmed.to_string(), "--out", s(&eval_pb)]);
    let pb: serde_json::Value = serde_json::from_slice(&fs::read(eval_pb.join("report.json")).unwrap()).unwrap();
    assert_eq!(pb["eta_percent"].as_f64().unwrap(), 0.0);

    let merged = ok(&["report", "--runs-dir", s(&runs)]);
    assert_eq!(merged.lines().count(), 4);
    let csv = fs::read_to_string(runs.join("consolidated.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn eval_rejects_mixed_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["train", "--config", s(&cfg), "--model", "convae-upa", "--seeds", "0", "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--model", "convae-upa", "--seeds", "0", "--missing-frac", "0.3", "--out", s(&b)]);
    let out = windassim(&[
        "eval",
        "--checkpoints",
        s(&a.join("convae-upa/seed-0.ckpt")),
        s(&b.join("convae-upa/seed-0.ckpt")),
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["train", "--config", s(&cfg), "--model", "varnet-upa-ecmwf", "--seeds", "1", "--out", s(out)]);
    }
    for f in ["seed-1.ckpt", "seed-1-phase1.ckpt", "seed-1-phase1-curve.csv", "seed-1-phase2-curve.csv"] {
        let p = Path::new("varnet-upa-ecmwf").join(f);
        assert_eq!(fs::read(a.join(&p)).unwrap(), fs::read(b.join(&p)).unwrap(), "{f} differs");
    }
}
