use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Workspace;
use crate::autodiff::Tensor;
use crate::checkpoint::{self, write_atomic};
use crate::config::Config;
use crate::dsp::{canonicalize, load_wav, DspParams, MelFrontEnd, MelSpec};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Generated,
}

/// One manifest line. `path` is relative to the manifest's directory unless
/// absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: String,
    pub split: Split,
    pub duration: f32,
}

impl ManifestRow {
    pub fn resolve(&self, manifest: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Corruption(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Corruption(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

/// Labelled mels with their manifest split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub mels: Vec<MelSpec>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

impl Corpus {
    pub fn select(&self, split: Split) -> (Vec<&MelSpec>, Vec<usize>) {
        let idx: Vec<usize> = (0..self.mels.len()).filter(|&i| self.splits[i] == split).collect();
        (idx.iter().map(|&i| &self.mels[i]).collect(), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

pub(crate) fn label_id(cfg: &Config, label: &str) -> Result<usize> {
    cfg.dataset
        .classes
        .iter()
        .position(|c| c == label)
        .ok_or_else(|| Error::Corruption(format!("manifest label {label:?} is not a configured class")))
}

pub(crate) fn clip_mel(fe: &MelFrontEnd, path: &Path) -> Result<MelSpec> {
    let clip = load_wav(path)?;
    Ok(fe.mel_spectrogram(&canonicalize(&clip, fe.params())?))
}

pub(crate) fn mels_of(fe: &MelFrontEnd, paths: &[PathBuf]) -> Result<Vec<MelSpec>> {
    par::map(paths.len(), |i| clip_mel(fe, &paths[i])).into_iter().collect()
}

fn cache_key(dsp: &DspParams, manifest: &[u8]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(dsp)?);
    h.update([0u8]);
    h.update(manifest);
    Ok(hex::encode(&h.finalize()[..8]))
}

/// Mels of every manifest row, computed once per (DSP parameters, manifest)
/// and cached under the work directory.
pub fn load_corpus(cfg: &Config, manifest: &Path) -> Result<Corpus> {
    let rows = read_manifest(manifest)?;
    let labels = rows.iter().map(|r| label_id(cfg, &r.label)).collect::<Result<Vec<_>>>()?;
    let splits = rows.iter().map(|r| r.split).collect();
    let key = cache_key(&cfg.dsp, &std::fs::read(manifest)?)?;
    let cache = Workspace::new(&cfg.work_dir).cache_dir().join(format!("mels-{key}.dtfr"));
    let (bands, frames) = (cfg.dsp.mel_bands, cfg.dsp.frames());
    if cache.is_file() {
        let entries = checkpoint::checkpoint_load(&cache)?;
        let t = checkpoint::find(&entries, "mels")?;
        if t.shape() == [rows.len(), bands, frames] {
            let mels = t
                .data()
                .chunks(bands * frames)
                .map(|c| MelSpec {
                    bands,
                    frames,
                    values: c.to_vec(),
                    params: cfg.dsp.clone(),
                })
                .collect();
            return Ok(Corpus { mels, labels, splits });
        }
    }
    let fe = MelFrontEnd::new(cfg.dsp.clone())?;
    let paths: Vec<PathBuf> = rows.iter().map(|r| r.resolve(manifest)).collect();
    let mels = mels_of(&fe, &paths)?;
    if !mels.is_empty() {
        let flat: Vec<f32> = mels.iter().flat_map(|m| m.values.iter().copied()).collect();
        let t = Tensor::new([mels.len(), bands, frames], flat)?;
        checkpoint::checkpoint_save(&cache, &[("mels".into(), t)])?;
    }
    Ok(Corpus { mels, labels, splits })
}
