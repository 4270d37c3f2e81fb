//! Run configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{DspParams, Recipe};
use crate::error::{Error, Result};
use crate::geneval::EvalConfig;
use crate::prior::PriorConfig;
use crate::vqvae::VqVaeConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Synth,
    WavDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub source: Source,
    /// Recipe names for `synth`, sub-directory names for `wav-dir`.
    pub classes: Vec<String>,
    /// Clips per class for `synth`.
    pub per_class: usize,
    /// Root holding one sub-directory per class for `wav-dir`.
    pub wav_dir: Option<PathBuf>,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: Source::Synth,
            classes: vec!["sweep".into(), "noise_burst".into(), "click_train".into()],
            per_class: 100,
            wav_dir: None,
            test_fraction: 0.1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub count: usize,
    pub griffin_lim_iters: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            count: 20,
            griffin_lim_iters: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    /// Output root; relative paths are taken from the config file's directory.
    pub work_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub dsp: DspParams,
    #[serde(default)]
    pub vqvae: VqVaeConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sample: SampleConfig,
}

impl Config {
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut c: Config =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        if c.work_dir.is_relative() {
            c.work_dir = base.join(&c.work_dir);
        }
        if let Some(d) = &c.dataset.wav_dir {
            if d.is_relative() {
                c.dataset.wav_dir = Some(base.join(d));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        self.dsp.validate()?;
        self.vqvae.validate()?;
        self.prior.validate()?;
        let d = &self.dataset;
        if d.classes.len() < 2 {
            return Err(Error::Config("dataset: at least two classes are required".into()));
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            return Err(Error::Config("dataset: test_fraction must lie in [0, 1)".into()));
        }
        match d.source {
            Source::Synth => {
                for c in &d.classes {
                    Recipe::from_name(c)?;
                }
                if d.per_class == 0 {
                    return Err(Error::Config("dataset: per_class must be positive".into()));
                }
            }
            Source::WavDir => {
                let dir = d
                    .wav_dir
                    .as_ref()
                    .ok_or_else(|| Error::Config("dataset: wav-dir source needs wav_dir".into()))?;
                for c in &d.classes {
                    let p = dir.join(c);
                    if !p.is_dir() {
                        return Err(Error::MissingInput(p));
                    }
                }
            }
        }
        if self.eval.bins_per_class == 0 || self.eval.bins_all == 0 {
            return Err(Error::Config("eval: bin counts must be positive".into()));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(Error::Config("eval: alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.classes.len()
    }

    /// Class index from a name or a number.
    pub fn class_id(&self, s: &str) -> Result<usize> {
        let names = &self.dataset.classes;
        let found = names
            .iter()
            .position(|n| n == s)
            .or_else(|| s.parse::<usize>().ok().filter(|&i| i < names.len()));
        found.ok_or_else(|| {
            let valid: Vec<String> = names.iter().enumerate().map(|(i, n)| format!("{i} ({n})")).collect();
            Error::InvalidArgument(format!("unknown class {s:?}; valid classes: {}", valid.join(", ")))
        })
    }
}
