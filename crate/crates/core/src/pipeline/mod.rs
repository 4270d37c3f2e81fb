//! Subcommand implementations over a work directory: corpus preparation,
//! mel caching, training, sampling, reconstruction and evaluation.

mod commands;
mod corpus;
mod models;

pub use commands::{
    evaluate, read_sidecar, reconstruct, sample, synth_data, train_prior, train_vqvae, DataSummary, PriorSummary,
    ReconSummary, SampleSummary, VqSummary,
};
pub use corpus::{load_corpus, read_manifest, write_manifest, Corpus, ManifestRow, Split};
pub use models::{
    load_prior, load_probe, load_vqvae, prior_entries, probe_entries, vqvae_entries,
};

use std::path::{Path, PathBuf};

/// Fixed layout under the configured work directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.csv")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn vqvae(&self) -> PathBuf {
        self.root.join("vqvae.dtfr")
    }

    pub fn vqvae_curve(&self) -> PathBuf {
        self.root.join("vqvae_loss.csv")
    }

    pub fn prior(&self) -> PathBuf {
        self.root.join("prior.dtfr")
    }

    pub fn prior_curve(&self) -> PathBuf {
        self.root.join("prior_loss.csv")
    }

    pub fn samples_dir(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// `foo.wav` to `foo.mel.dtfr`.
pub fn mel_sidecar(wav: &Path) -> PathBuf {
    wav.with_extension("mel.dtfr")
}
