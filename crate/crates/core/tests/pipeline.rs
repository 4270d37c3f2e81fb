use std::path::Path;

use dtfr_core::config::Config;
use dtfr_core::dsp::{write_wav, AudioClip};
use dtfr_core::error::Error;
use dtfr_core::pipeline::{self, read_manifest, Split, Workspace};

fn micro(dir: &Path, per_class: usize) -> Config {
    let text = format!(
        r#"{{
  "version": 1,
  "work_dir": "run",
  "seed": 3,
  "dataset": {{"per_class": {per_class}}},
  "dsp": {{"sample_rate": 8000, "clip_seconds": 0.256, "frame_size": 256, "hop": 64, "mel_bands": 16}},
  "vqvae": {{"codebook_size": 32, "codeword_dim": 8, "steps": 12, "batch_size": 4, "learning_rate": 0.003}},
  "prior": {{"d_model": 16, "layers": 2, "steps": 9, "batch_size": 4}},
  "eval": {{"bins_per_class": 3, "bins_all": 6, "probe": {{"channels": [4, 8], "steps": 10, "batch_size": 8}}}},
  "sample": {{"count": 3, "griffin_lim_iters": 5}}
}}"#
    );
    Config::from_json(&text, dir).unwrap()
}

fn quiet(_: &str) {}

fn trained(dir: &Path) -> Config {
    let cfg = micro(dir, 10);
    pipeline::synth_data(&cfg, None).unwrap();
    pipeline::train_vqvae(&cfg, &mut quiet).unwrap();
    pipeline::train_prior(&cfg, &mut quiet).unwrap();
    cfg
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_data_writes_a_balanced_seeded_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro(dir.path(), 100);
    let s = pipeline::synth_data(&cfg, None).unwrap();
    assert_eq!((s.clips, s.train, s.test), (300, 270, 30));
    let rows = read_manifest(&s.manifest).unwrap();
    assert_eq!(rows.len(), 300);
    for class in &cfg.dataset.classes {
        let mine: Vec<_> = rows.iter().filter(|r| &r.label == class).collect();
        assert_eq!(mine.len(), 100, "{class}");
        assert_eq!(mine.iter().filter(|r| r.split == Split::Test).count(), 10, "{class}");
    }
    let first = std::fs::read(&s.manifest).unwrap();
    let wav = std::fs::read(rows[7].resolve(&s.manifest)).unwrap();
    pipeline::synth_data(&cfg, None).unwrap();
    assert_eq!(std::fs::read(&s.manifest).unwrap(), first);
    assert_eq!(std::fs::read(rows[7].resolve(&s.manifest)).unwrap(), wav);
}

#[test]
fn training_the_prior_needs_a_vqvae_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro(dir.path(), 4);
    pipeline::synth_data(&cfg, None).unwrap();
    let e = pipeline::train_prior(&cfg, &mut quiet).unwrap_err();
    assert!(matches!(e, Error::MissingInput(ref p) if p.ends_with("vqvae.dtfr")), "{e}");
    assert!(e.is_usage());
}

#[test]
fn training_writes_one_curve_row_per_step_and_full_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path());
    let ws = Workspace::new(&cfg.work_dir);
    let vq_rows = std::fs::read_to_string(ws.vqvae_curve()).unwrap();
    assert_eq!(vq_rows.lines().count(), cfg.vqvae.steps + 1);
    assert_eq!(vq_rows.lines().next().unwrap(), "step,total,recon,codebook,commit,perplexity");
    let prior_rows = std::fs::read_to_string(ws.prior_curve()).unwrap();
    assert_eq!(prior_rows.lines().count(), cfg.prior.steps + 1);

    let vq = json(&ws.reports_dir().join("vqvae_train.json"));
    for key in ["split", "steps", "parameters", "mscs_enabled", "final_recon", "held_out_mse", "untrained_held_out_mse"] {
        assert!(vq.get(key).is_some(), "vqvae report lacks {key}");
    }
    assert_eq!(vq["split"], "seeded per-class shuffle, 90/10 train/test");
    let prior = json(&ws.reports_dir().join("prior_train.json"));
    for key in ["split", "steps", "final_loss", "held_out_loss", "uniform_loss"] {
        assert!(prior.get(key).is_some(), "prior report lacks {key}");
    }
    assert!((prior["uniform_loss"].as_f64().unwrap() - 32f64.ln()).abs() < 1e-9);
}

#[test]
fn sampling_is_reproducible_and_sidecars_match_the_decoder() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let sa = pipeline::sample(&cfg, "noise_burst", 2, 11, None, Some(&a)).unwrap();
    let sb = pipeline::sample(&cfg, "1", 2, 11, None, Some(&b)).unwrap();
    assert_eq!(sa.class, 1);
    assert_eq!(sb.class, 1);
    for (x, y) in sa.files.iter().zip(&sb.files) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let vq = pipeline::load_vqvae(&cfg, &Workspace::new(&cfg.work_dir).vqvae()).unwrap();
    for f in &sa.files {
        let (mel, grid) = pipeline::read_sidecar(&pipeline::mel_sidecar(f), &cfg).unwrap();
        assert_eq!(vq.decode_from_indices(&grid, &cfg.dsp).unwrap().values, mel.values);
    }
    let rows = read_manifest(&a.join("manifest.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split == Split::Generated && r.label == "noise_burst"));

    let e = pipeline::sample(&cfg, "violin", 1, 0, None, None).unwrap_err();
    assert!(e.is_usage(), "{e}");
}

#[test]
fn reconstruct_handles_a_silent_clip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro(dir.path(), 4);
    pipeline::synth_data(&cfg, None).unwrap();
    pipeline::train_vqvae(&cfg, &mut quiet).unwrap();
    let input = dir.path().join("silence.wav");
    write_wav(&AudioClip::new(vec![0.0; cfg.dsp.clip_samples()], cfg.dsp.sample_rate), &input).unwrap();
    let out = dir.path().join("out.wav");
    let s = pipeline::reconstruct(&cfg, &input, &out).unwrap();
    assert!(s.mse.is_finite() && s.mse >= 0.0);
    assert!(out.is_file());
}

#[test]
fn evaluate_scores_generated_clips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path());
    let gen = dir.path().join("gen");
    for class in ["0", "1", "2"] {
        pipeline::sample(&cfg, class, 2, 0, None, Some(&gen)).unwrap();
    }
    let (report, table) = pipeline::evaluate(&cfg, &gen, None, None, &mut quiet).unwrap();
    assert_eq!(report.classes.len(), 3);
    assert_eq!(report.all_classes.n_generated, 6);
    assert!((0.0..=1.0).contains(&report.accuracy));
    assert!(table.contains("reference split: seeded per-class shuffle, 90/10 train/test"));
    let ws = Workspace::new(&cfg.work_dir);
    let saved = json(&ws.reports_dir().join("eval_report.json"));
    for key in ["classes", "all_classes", "accuracy", "accuracy_class_mean", "probe_test_accuracy"] {
        assert!(saved.get(key).is_some(), "eval report lacks {key}");
    }
    let again = pipeline::evaluate(&cfg, &gen, None, None, &mut quiet).unwrap();
    assert_eq!(again.0, report);

    let empty = dir.path().join("nothing");
    std::fs::create_dir_all(&empty).unwrap();
    assert!(pipeline::evaluate(&cfg, &empty, None, None, &mut quiet).unwrap_err().is_usage());
}
