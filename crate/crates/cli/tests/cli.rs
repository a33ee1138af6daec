use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "seed": 3,
  "data": {"rows": 16, "cols": 16, "coils": 1, "train": 3, "val": 1, "test": 3, "num_ellipses": 4},
  "masks": {"r": 2.0, "r_tilde": 1.6, "center": 2, "ssdu_center": 4},
  "training": {"epochs": 3, "batch_size": 2, "model": {"kind": "conv", "stages": 1, "features": 4}},
  "metrics": {"crop": 8},
  "sweep": {"r_tilde": [1.6, 2.5], "regimes": ["supervised", "weighted_n2n"]},
  "oracle": {"ensembles": 5, "kj_draws": 20000}
}"#;

fn n2n(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_n2n")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn with_overrides(patch: Value) -> String {
    let mut base: Value = serde_json::from_str(TINY).unwrap();
    merge(&mut base, patch);
    base.to_string()
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = n2n(&["gen-data", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["train.cks", "val.cks", "test.cks", "manifest.json"] {
        assert_eq!(fs::read(a.join("dataset").join(f)).unwrap(), fs::read(b.join("dataset").join(f)).unwrap(), "{f}");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(a.join("dataset/manifest.json")).unwrap()).unwrap();
    assert!(manifest.to_string().contains("\"count\":3"));
}

#[test]
fn verify_claims_passes_and_detects_corrupted_k() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let out = tmp.path().join("o");
    let o = n2n(&["verify-claims", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], Value::Bool(true));
    assert!(out.join("claims_report.json").exists());

    let o = n2n(&["verify-claims", "--config", &cfg, "--k-perturbation", "0.01"]);
    assert_eq!(code(&o), 3);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["claim1"]["passed"], Value::Bool(false));
}

#[test]
fn unit_p_tilde_is_rejected_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &with_overrides(serde_json::json!({"oracle": {"ensemble": {"p_tilde_max": 1.0}}})),
    );
    let o = n2n(&["verify-claims", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(o.stdout.is_empty());
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.json", r#"{"masks": {"bogus": 1}}"#);
    assert_eq!(code(&n2n(&["gen-data", "--config", &bad])), 2);
    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&n2n(&["gen-data", "--config", missing.to_str().unwrap()])), 2);
}

#[test]
fn train_then_eval_and_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let out = tmp.path().join("o");
    let out_s = out.to_str().unwrap();

    // no dataset yet
    assert_eq!(code(&n2n(&["train", "--config", &cfg, "--out", out_s])), 2);
    assert_eq!(code(&n2n(&["gen-data", "--config", &cfg, "--out", out_s])), 0);

    let run = out.join("runs/weighted_n2n_R2_Rt1.6");
    let o = n2n(&["train", "--config", &cfg, "--out", out_s, "--regime", "weighted_n2n"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.bin", "loss_trace.csv", "config.resolved.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(read_csv(&run.join("loss_trace.csv")).len(), 3);

    let o = n2n(&["eval", "--config", &cfg, "--out", out_s, "--regime", "weighted_n2n"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first: Value = serde_json::from_slice(&fs::read(run.join("summary.json")).unwrap()).unwrap();
    let rows = read_csv(&run.join("metrics.csv"));
    assert_eq!(rows.len(), 3);
    let hash = first["config_hash"].as_str().unwrap();
    assert!(rows.iter().all(|r| r.iter().any(|f| f == hash)));

    // checkpoint trained as another regime
    let o = n2n(&[
        "eval",
        "--config",
        &cfg,
        "--out",
        out_s,
        "--regime",
        "ssdu_proposed",
        "--checkpoint",
        run.join("checkpoint.bin").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);

    // same seed, same summary
    assert_eq!(code(&n2n(&["train", "--config", &cfg, "--out", out_s, "--regime", "weighted_n2n"])), 0);
    assert_eq!(code(&n2n(&["eval", "--config", &cfg, "--out", out_s, "--regime", "weighted_n2n"])), 0);
    let second: Value = serde_json::from_slice(&fs::read(run.join("summary.json")).unwrap()).unwrap();
    for m in ["nmse", "ssim"] {
        let (a, b) = (first["metrics"][m]["mean"].as_f64().unwrap(), second["metrics"][m]["mean"].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-6, "{m}: {a} vs {b}");
    }
}

#[test]
fn fully_sampled_supervised_eval_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &with_overrides(serde_json::json!({"regime": "supervised", "masks": {"r": 1.0}, "training": {"epochs": 1}})),
    );
    let out = tmp.path().join("o");
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&n2n(&["gen-data", "--config", &cfg, "--out", out_s])), 0);
    assert_eq!(code(&n2n(&["train", "--config", &cfg, "--out", out_s])), 0);
    let o = n2n(&["eval", "--config", &cfg, "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["metrics"]["nmse"]["max"].as_f64().unwrap(), 0.0);
    assert_eq!(read_csv(&out.join("runs/supervised_R1/metrics.csv")).len(), 3);
}

#[test]
fn sweep_writes_sorted_long_format() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let out = tmp.path().join("o");
    let o = n2n(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["method", "R", "Rtilde", "mean_nmse", "mean_ssim", "config_hash"]);
    let rows: Vec<(String, String)> =
        reader.records().map(|r| r.unwrap()).map(|r| (r[0].to_string(), r[2].to_string())).collect();
    assert_eq!(
        rows,
        [
            ("supervised".to_string(), String::new()),
            ("weighted_n2n".to_string(), "1.6".to_string()),
            ("weighted_n2n".to_string(), "2.5".to_string()),
        ]
    );

    // a single-point sweep equals train followed by eval
    let single = tmp.path().join("s");
    let s = single.to_str().unwrap();
    assert_eq!(code(&n2n(&["sweep", "--config", &cfg, "--out", s, "--r-tilde", "2.5"])), 0);
    let row = read_csv(&single.join("sweep.csv")).into_iter().find(|r| &r[0] == "weighted_n2n").unwrap();
    assert_eq!(code(&n2n(&["train", "--config", &cfg, "--out", s, "--regime", "weighted_n2n", "--r-tilde", "2.5"])), 0);
    let o = n2n(&["eval", "--config", &cfg, "--out", s, "--regime", "weighted_n2n", "--r-tilde", "2.5"]);
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    let nmse: f64 = row[3].parse().unwrap();
    assert!((summary["metrics"]["nmse"]["mean"].as_f64().unwrap() - nmse).abs() <= 1e-9);
}
