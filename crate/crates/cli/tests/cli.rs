use std::path::Path;
use std::process::{Command, Output};

const MICRO: &str = r#"{
  "version": 1,
  "work_dir": "run",
  "seed": 3,
  "dataset": {"per_class": 6},
  "dsp": {"sample_rate": 8000, "clip_seconds": 0.256, "frame_size": 256, "hop": 64, "mel_bands": 16},
  "vqvae": {"codebook_size": 32, "codeword_dim": 8, "steps": 8, "batch_size": 4, "learning_rate": 0.003},
  "prior": {"d_model": 16, "layers": 2, "steps": 6, "batch_size": 4},
  "eval": {"bins_per_class": 3, "bins_all": 6, "probe": {"channels": [4, 8], "steps": 6, "batch_size": 8}},
  "sample": {"count": 2, "griffin_lim_iters": 4}
}"#;

fn dtfr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtfr"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dtfr(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("micro.json"), MICRO).unwrap();
    dir
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dtfr(dir.path(), &["synth-data", "--config", "absent.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}

#[test]
fn train_prior_without_a_vqvae_exits_with_code_2() {
    let dir = setup();
    ok(dir.path(), &["synth-data", "--config", "micro.json"]);
    let out = dtfr(dir.path(), &["train-prior", "--config", "micro.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vqvae.dtfr"));
}

#[test]
fn malformed_config_and_bad_thread_count_are_usage_errors() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.json"), r#"{"version": 1, "vqvae": {"codebook_size": 0}}"#).unwrap();
    assert_eq!(dtfr(dir.path(), &["synth-data", "--config", "bad.json"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_dtfr"))
        .args(["synth-data", "--config", "micro.json"])
        .env("DTFR_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = setup();
    let d = dir.path();
    assert!(ok(d, &["synth-data", "--config", "micro.json"]).contains("18 clips"));
    let vq: serde_json::Value = serde_json::from_str(&ok(d, &["train-vqvae", "--config", "micro.json"])).unwrap();
    assert_eq!(vq["steps"], 8);
    let prior: serde_json::Value = serde_json::from_str(&ok(d, &["train-prior", "--config", "micro.json"])).unwrap();
    assert_eq!(prior["steps"], 6);

    let listed = ok(d, &["sample", "--config", "micro.json", "--class", "click_train", "--seed", "4"]);
    assert_eq!(listed.lines().count(), 2);
    assert!(listed.contains("class2_seed4_000.wav"));
    let bad = dtfr(d, &["sample", "--config", "micro.json", "--class", "7"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("sweep"));

    let table = ok(d, &["evaluate", "--config", "micro.json", "--generated", "run/samples"]);
    assert!(table.contains("reference split"));
    assert!(d.join("run/reports/eval_report.json").is_file());

    let rec = ok(
        d,
        &["reconstruct", "--config", "micro.json", "--input", "run/data/sweep/sweep_0001.wav", "--output", "rec.wav"],
    );
    assert!(rec.starts_with("mse "));
    assert!(d.join("rec.wav").is_file());
}
