use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::corpus::{clip_mel, label_id, mels_of};
use super::models::{load_prior, load_probe, load_vqvae, prior_entries, probe_entries, vqvae_entries};
use super::{load_corpus, mel_sidecar, read_manifest, write_manifest, Corpus, ManifestRow, Split, Workspace};
use crate::autodiff::Tensor;
use crate::checkpoint::{self, checkpoint_load, checkpoint_save, write_atomic};
use crate::config::{Config, Source};
use crate::dsp::{griffin_lim, synth_dataset, write_wav, MelFrontEnd, MelSpec, Recipe};
use crate::error::{Error, Result};
use crate::geneval::{evaluate_generation, fit_bins, train_probe_classifier, EvalReport};
use crate::index_grid::IndexGrid;
use crate::prior::{self, ClassCondition};
use crate::vqvae::{self, VqVae};
use crate::{par, rng};

/// Seed streams derived from the run seed.
mod stream {
    pub const VQVAE: u64 = 1;
    pub const PRIOR: u64 = 2;
    pub const PROBE: u64 = 3;
    pub const BINS: u64 = 4;
    pub const SPLIT: u64 = 5;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub clips: usize,
    pub train: usize,
    pub test: usize,
    pub manifest: PathBuf,
}

fn rel(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Writes the synthetic corpus (or indexes a WAV directory) and a manifest
/// with a seeded per-class train/test split. `out_dir` defaults to the
/// workspace data directory.
pub fn synth_data(cfg: &Config, out_dir: Option<&Path>) -> Result<DataSummary> {
    let data = out_dir.map(Path::to_path_buf).unwrap_or_else(|| Workspace::new(&cfg.work_dir).data_dir());
    std::fs::create_dir_all(&data)?;
    let ds = &cfg.dataset;
    let mut per_class: Vec<Vec<(String, f32)>> = vec![Vec::new(); ds.classes.len()];
    match ds.source {
        Source::Synth => {
            let recipes = ds.classes.iter().map(|c| Recipe::from_name(c)).collect::<Result<Vec<_>>>()?;
            let clips = synth_dataset(&recipes, ds.per_class, ds.seed, &cfg.dsp)?;
            let jobs: Vec<(usize, usize)> = (0..recipes.len())
                .flat_map(|c| (0..ds.per_class).map(move |i| (c, i)))
                .collect();
            let written = par::map(jobs.len(), |j| -> Result<(usize, String, f32)> {
                let (c, i) = jobs[j];
                let name = &ds.classes[c];
                let path = data.join(name).join(format!("{name}_{i:04}.wav"));
                std::fs::create_dir_all(path.parent().unwrap())?;
                write_wav(&clips[j].clip, &path)?;
                Ok((c, rel(&path, &data), clips[j].clip.duration()))
            });
            for w in written {
                let (c, p, d) = w?;
                per_class[c].push((p, d));
            }
        }
        Source::WavDir => {
            let root = ds.wav_dir.as_ref().expect("validated");
            for (c, name) in ds.classes.iter().enumerate() {
                let mut files: Vec<PathBuf> = std::fs::read_dir(root.join(name))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                    .collect();
                files.sort();
                if files.is_empty() {
                    return Err(Error::MissingInput(root.join(name)));
                }
                for f in files {
                    let clip = crate::dsp::load_wav(&f)?;
                    let abs = std::path::absolute(&f)?;
                    per_class[c].push((abs.to_string_lossy().into_owned(), clip.duration()));
                }
            }
        }
    }
    let mut rows = Vec::new();
    let (mut train, mut test) = (0, 0);
    for (c, files) in per_class.iter().enumerate() {
        let mut order: Vec<usize> = (0..files.len()).collect();
        order.shuffle(&mut rng::rng(rng::derive_seed(ds.seed, &[stream::SPLIT, c as u64])));
        let n_test = (files.len() as f64 * ds.test_fraction).round() as usize;
        let mut is_test = vec![false; files.len()];
        for &i in &order[..n_test] {
            is_test[i] = true;
        }
        for (i, (p, d)) in files.iter().enumerate() {
            let split = if is_test[i] { Split::Test } else { Split::Train };
            if is_test[i] {
                test += 1;
            } else {
                train += 1;
            }
            rows.push(ManifestRow {
                path: p.clone(),
                label: ds.classes[c].clone(),
                split,
                duration: *d,
            });
        }
    }
    let manifest = data.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(DataSummary {
        clips: rows.len(),
        train,
        test,
        manifest,
    })
}

fn corpus(cfg: &Config) -> Result<Corpus> {
    load_corpus(cfg, &require(Workspace::new(&cfg.work_dir).manifest())?)
}

/// How train and test folds were formed, recorded in every report.
fn split_label(cfg: &Config) -> String {
    let test = (cfg.dataset.test_fraction * 100.0).round();
    format!("seeded per-class shuffle, {}/{} train/test", 100.0 - test, test)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Mean of per-sample values over a set, one sample per work item.
fn mean_over<F: Fn(&MelSpec) -> Result<f64> + Sync>(mels: &[&MelSpec], f: F) -> Result<Option<f64>> {
    if mels.is_empty() {
        return Ok(None);
    }
    let v = par::map(mels.len(), |i| f(mels[i])).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Some(v.iter().sum::<f64>() / v.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqSummary {
    pub split: String,
    pub steps: usize,
    pub parameters: usize,
    pub encoder_parameters: usize,
    pub mscs_enabled: bool,
    pub final_recon: Option<f32>,
    pub final_perplexity: Option<f64>,
    pub dead_codes: usize,
    /// Mel-domain MSE of decode(encode(x)) over the test split.
    pub held_out_mse: Option<f64>,
    pub untrained_held_out_mse: Option<f64>,
}

fn recon_mse(m: &VqVae, mel: &MelSpec) -> Result<f64> {
    Ok(mel.mse(&m.reconstruct(mel)?))
}

pub fn train_vqvae(cfg: &Config, progress: &mut dyn FnMut(&str)) -> Result<VqSummary> {
    let ws = Workspace::new(&cfg.work_dir);
    let c = corpus(cfg)?;
    let (train, _) = c.select(Split::Train);
    let owned: Vec<MelSpec> = train.iter().map(|&m| m.clone()).collect();
    let steps = cfg.vqvae.steps;
    let every = (steps / 20).max(1);
    let t = vqvae::train_vqvae(&owned, &cfg.vqvae, steps, rng::derive_seed(cfg.seed, &[stream::VQVAE]), |l| {
        if l.step % every == 0 || l.step + 1 == steps {
            progress(&format!(
                "vqvae step {:>6}  total {:.5}  recon {:.5}  codebook {:.5}  commit {:.5}  perplexity {:.1}",
                l.step, l.terms.total, l.terms.recon, l.terms.codebook, l.terms.commit, l.perplexity
            ));
        }
    })?;
    checkpoint_save(&ws.vqvae(), &vqvae_entries(&t.model))?;
    let mut csv = String::from("step,total,recon,codebook,commit,perplexity\n");
    for l in &t.curve {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            l.step, l.terms.total, l.terms.recon, l.terms.codebook, l.terms.commit, l.perplexity
        ));
    }
    write_atomic(&ws.vqvae_curve(), csv.as_bytes())?;
    let (test, _) = c.select(Split::Test);
    let summary = VqSummary {
        split: split_label(cfg),
        steps,
        parameters: t.model.param_count(),
        encoder_parameters: t.model.encoder_param_count(),
        mscs_enabled: cfg.vqvae.encoder.mscs_enabled,
        final_recon: t.curve.last().map(|l| l.terms.recon),
        final_perplexity: t.curve.last().map(|l| l.perplexity),
        dead_codes: t.dead_codes.len(),
        held_out_mse: mean_over(&test, |m| recon_mse(&t.model, m))?,
        untrained_held_out_mse: mean_over(&test, |m| recon_mse(&t.initial, m))?,
    };
    write_json(&ws.reports_dir().join("vqvae_train.json"), &summary)?;
    Ok(summary)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingInput(path))
    }
}

/// Index grids of every corpus clip under the current VQ-VAE checkpoint,
/// cached by checkpoint hash.
fn corpus_indices(cfg: &Config, vq: &VqVae, c: &Corpus) -> Result<Vec<IndexGrid>> {
    let ws = Workspace::new(&cfg.work_dir);
    let mut h = Sha256::new();
    h.update(std::fs::read(ws.vqvae())?);
    h.update(std::fs::read(ws.manifest())?);
    let key = hex::encode(&h.finalize()[..8]);
    let path = ws.cache_dir().join(format!("indices-{key}.dtfr"));
    let (rows, cols) = vq.latent_shape();
    if path.is_file() {
        let e = checkpoint_load(&path)?;
        let t = checkpoint::find(&e, "indices")?;
        if t.shape() == [c.mels.len(), rows, cols] {
            return t
                .data()
                .chunks(rows * cols)
                .map(|ch| {
                    let v: Vec<usize> = ch.iter().map(|&x| x as usize).collect();
                    IndexGrid::from_usize(rows, cols, &v)
                })
                .collect();
        }
    }
    let grids = vq.encode_many(&c.mels)?;
    let flat: Vec<f32> = grids.iter().flat_map(|g| g.flatten().iter().map(|&i| i as f32)).collect();
    checkpoint_save(&path, &[("indices".into(), Tensor::new([grids.len(), rows, cols], flat)?)])?;
    Ok(grids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSummary {
    pub split: String,
    pub steps: usize,
    pub parameters: usize,
    pub final_loss: Option<f32>,
    pub held_out_loss: Option<f64>,
    pub uniform_loss: f64,
}

pub fn train_prior(cfg: &Config, progress: &mut dyn FnMut(&str)) -> Result<PriorSummary> {
    let ws = Workspace::new(&cfg.work_dir);
    let vq_path = require(ws.vqvae())?;
    let vq = load_vqvae(cfg, &vq_path)?;
    let c = corpus(cfg)?;
    let grids = corpus_indices(cfg, &vq, &c)?;
    let pick = |s: Split| -> (Vec<IndexGrid>, Vec<usize>) {
        (0..grids.len())
            .filter(|&i| c.splits[i] == s)
            .map(|i| (grids[i].clone(), c.labels[i]))
            .unzip()
    };
    let (tg, tl) = pick(Split::Train);
    let (hg, hl) = pick(Split::Test);
    let steps = cfg.prior.steps;
    let every = (steps / 20).max(1);
    let k = cfg.vqvae.codebook_size;
    let t = prior::train_prior(
        &tg,
        &tl,
        cfg.num_classes(),
        k,
        &cfg.prior,
        steps,
        rng::derive_seed(cfg.seed, &[stream::PRIOR]),
        |l| {
            if l.step % every == 0 || l.step + 1 == steps {
                progress(&format!("prior step {:>6}  loss {:.5}", l.step, l.loss));
            }
        },
    )?;
    checkpoint_save(&ws.prior(), &prior_entries(&t.model))?;
    let mut csv = String::from("step,loss\n");
    for l in &t.curve {
        csv.push_str(&format!("{},{}\n", l.step, l.loss));
    }
    write_atomic(&ws.prior_curve(), csv.as_bytes())?;
    let held_out_loss = if hg.is_empty() {
        None
    } else {
        let losses = par::map(hg.len(), |i| {
            let cond = ClassCondition::new(hl[i], cfg.num_classes())?;
            t.model.loss(&[&hg[i]], &[cond]).map(|v| v as f64)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Some(losses.iter().sum::<f64>() / losses.len() as f64)
    };
    let summary = PriorSummary {
        split: split_label(cfg),
        steps,
        parameters: t.model.params().numel(),
        final_loss: t.curve.last().map(|l| l.loss),
        held_out_loss,
        uniform_loss: (k as f64).ln(),
    };
    write_json(&ws.reports_dir().join("prior_train.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub class: usize,
    pub files: Vec<PathBuf>,
}

/// Prior sample, VQ decoder, Griffin-Lim, WAV. Each WAV gets a sidecar with
/// its decoded mel and index grid.
pub fn sample(
    cfg: &Config,
    class: &str,
    count: usize,
    seed: u64,
    temperature: Option<f32>,
    out_dir: Option<&Path>,
) -> Result<SampleSummary> {
    let ws = Workspace::new(&cfg.work_dir);
    let c = cfg.class_id(class)?;
    let temperature = temperature.unwrap_or(cfg.prior.temperature);
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument("temperature must be finite and non-negative".into()));
    }
    let vq = load_vqvae(cfg, &require(ws.vqvae())?)?;
    let pm = load_prior(cfg, &require(ws.prior())?)?;
    if pm.num_classes() != cfg.num_classes() {
        return Err(Error::Corruption("prior checkpoint class count differs from the config".into()));
    }
    let out = out_dir.map(Path::to_path_buf).unwrap_or_else(|| ws.samples_dir());
    std::fs::create_dir_all(&out)?;
    let cond = ClassCondition::new(c, cfg.num_classes())?;
    let grids = pm.sample_many(cond, temperature, rng::derive_seed(seed, &[c as u64]), count)?;
    let mels = vq.decode_many(&grids, &cfg.dsp)?;
    let iters = cfg.sample.griffin_lim_iters;
    let written = par::map(count, |i| -> Result<PathBuf> {
        let wav = out.join(format!("class{c}_seed{seed}_{i:03}.wav"));
        let audio = griffin_lim(&mels[i], iters)?;
        write_wav(&audio.clip, &wav)?;
        let (bands, frames) = (mels[i].bands, mels[i].frames);
        let (rows, cols) = (grids[i].rows(), grids[i].cols());
        checkpoint_save(
            &mel_sidecar(&wav),
            &[
                ("mel".into(), Tensor::new([bands, frames], mels[i].values.clone())?),
                (
                    "indices".into(),
                    Tensor::new([rows, cols], grids[i].flatten().iter().map(|&v| v as f32).collect())?,
                ),
            ],
        )?;
        Ok(wav)
    });
    let files = written.into_iter().collect::<Result<Vec<_>>>()?;

    let manifest = out.join("manifest.csv");
    let mut rows = if manifest.is_file() { read_manifest(&manifest)? } else { Vec::new() };
    let names: Vec<String> = files.iter().map(|f| rel(f, &out)).collect();
    rows.retain(|r| !names.contains(&r.path));
    let duration = cfg.dsp.clip_samples() as f32 / cfg.dsp.sample_rate as f32;
    rows.extend(names.into_iter().map(|path| ManifestRow {
        path,
        label: cfg.dataset.classes[c].clone(),
        split: Split::Generated,
        duration,
    }));
    rows.sort_by(|a, b| a.path.cmp(&b.path));
    write_manifest(&manifest, &rows)?;
    Ok(SampleSummary { class: c, files })
}

/// Mel and index grid stored next to a sampled WAV.
pub fn read_sidecar(path: &Path, cfg: &Config) -> Result<(MelSpec, IndexGrid)> {
    let e = checkpoint_load(path)?;
    let m = checkpoint::find(&e, "mel")?;
    let g = checkpoint::find(&e, "indices")?;
    let (&[bands, frames], &[rows, cols]) = (m.shape(), g.shape()) else {
        return Err(Error::Corruption(format!("{}: unexpected sidecar shapes", path.display())));
    };
    let v: Vec<usize> = g.data().iter().map(|&x| x as usize).collect();
    Ok((
        MelSpec {
            bands,
            frames,
            values: m.data().to_vec(),
            params: cfg.dsp.clone(),
        },
        IndexGrid::from_usize(rows, cols, &v)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconSummary {
    pub mse: f64,
    pub output: PathBuf,
}

pub fn reconstruct(cfg: &Config, wav_in: &Path, wav_out: &Path) -> Result<ReconSummary> {
    let ws = Workspace::new(&cfg.work_dir);
    let vq = load_vqvae(cfg, &require(ws.vqvae())?)?;
    let fe = MelFrontEnd::new(cfg.dsp.clone())?;
    let mel = clip_mel(&fe, wav_in)?;
    let out = vq.reconstruct(&mel)?;
    let audio = griffin_lim(&out, cfg.sample.griffin_lim_iters)?;
    write_wav(&audio.clip, wav_out)?;
    Ok(ReconSummary {
        mse: mel.mse(&out),
        output: wav_out.to_path_buf(),
    })
}

/// Scores a directory of generated clips against the reference corpus. The
/// probe is trained on the reference train split once and cached.
pub fn evaluate(
    cfg: &Config,
    generated_dir: &Path,
    reference: Option<&Path>,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<(EvalReport, String)> {
    let ws = Workspace::new(&cfg.work_dir);
    let ref_manifest = reference.map(Path::to_path_buf).unwrap_or_else(|| ws.manifest());
    let reference = load_corpus(cfg, &ref_manifest)?;
    let gen_manifest = require(generated_dir.join("manifest.csv"))?;
    let rows = read_manifest(&gen_manifest)?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("{} lists no clips", gen_manifest.display())));
    }
    let intended = rows.iter().map(|r| label_id(cfg, &r.label)).collect::<Result<Vec<_>>>()?;
    let fe = MelFrontEnd::new(cfg.dsp.clone())?;
    let paths: Vec<PathBuf> = rows.iter().map(|r| r.resolve(&gen_manifest)).collect();
    let generated = par::map(paths.len(), |i| {
        let side = mel_sidecar(&paths[i]);
        if side.is_file() {
            read_sidecar(&side, cfg).map(|(m, _)| m)
        } else {
            mels_of(&fe, std::slice::from_ref(&paths[i])).map(|mut v| v.remove(0))
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let (train, train_y) = reference.select(Split::Train);
    let (test, test_y) = reference.select(Split::Test);
    let nc = cfg.num_classes();
    let mut h = Sha256::new();
    h.update(std::fs::read(&ref_manifest)?);
    h.update(serde_json::to_vec(&cfg.dsp)?);
    h.update(serde_json::to_vec(&cfg.eval.probe)?);
    h.update(cfg.seed.to_le_bytes());
    let probe_path = ws.cache_dir().join(format!("probe-{}.dtfr", hex::encode(&h.finalize()[..8])));
    let probe = if probe_path.is_file() {
        load_probe(cfg, &probe_path)?
    } else {
        progress("training the probe classifier");
        let p = train_probe_classifier(&train, &train_y, nc, &cfg.eval.probe, rng::derive_seed(cfg.seed, &[stream::PROBE]))?;
        checkpoint_save(&probe_path, &probe_entries(&p))?;
        p
    };
    let test_acc = if test.is_empty() { None } else { Some(probe.accuracy(&test, &test_y)?) };
    progress("fitting k-means bins");
    let bins = fit_bins(&train, &train_y, nc, &cfg.eval, rng::derive_seed(cfg.seed, &[stream::BINS]))?;
    let gen_refs: Vec<&MelSpec> = generated.iter().collect();
    let report = evaluate_generation(&gen_refs, &intended, &bins, &probe, &cfg.dataset.classes, test_acc)?;
    let table = format!("{}reference split: {}\n", report.to_table(), split_label(cfg));
    let out = out_dir.map(Path::to_path_buf).unwrap_or_else(|| ws.reports_dir());
    write_json(&out.join("eval_report.json"), &report)?;
    write_atomic(&out.join("eval_table.txt"), table.as_bytes())?;
    Ok((report, table))
}
