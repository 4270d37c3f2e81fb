use serde::{Deserialize, Serialize};

use super::{jsd, kmeans_fit, ndb, BinModel, Probe, ProbeConfig};
use crate::dsp::MelSpec;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub bins_per_class: usize,
    pub bins_all: usize,
    /// Significance level of the per-bin test.
    pub alpha: f64,
    pub probe: ProbeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bins_per_class: 10,
            bins_all: 30,
            alpha: 0.05,
            probe: ProbeConfig::default(),
        }
    }
}

/// Class-wise and pooled bin models over training mels.
#[derive(Debug, Clone)]
pub struct Bins {
    pub per_class: Vec<BinModel>,
    pub all: BinModel,
}

/// Fits `bins_per_class` bins per class and `bins_all` over everything. A
/// class with fewer clips than bins gets one bin per clip.
pub fn fit_bins(train: &[&MelSpec], labels: &[usize], num_classes: usize, cfg: &EvalConfig, seed: u64) -> Result<Bins> {
    if train.len() != labels.len() {
        return Err(Error::dim("one label per training mel is required"));
    }
    let per_class = (0..num_classes)
        .map(|c| {
            let pts: Vec<&[f32]> = train
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(m, _)| m.values.as_slice())
                .collect();
            if pts.is_empty() {
                return Err(Error::InvalidArgument(format!("class {c} has no training clips")));
            }
            let mut b = kmeans_fit(&pts, cfg.bins_per_class.min(pts.len()), rng::derive_seed(seed, &[c as u64]))?;
            b.alpha = cfg.alpha;
            Ok(b)
        })
        .collect::<Result<_>>()?;
    let pts: Vec<&[f32]> = train.iter().map(|m| m.values.as_slice()).collect();
    let mut all = kmeans_fit(&pts, cfg.bins_all.min(pts.len()), rng::derive_seed(seed, &[u64::MAX]))?;
    all.alpha = cfg.alpha;
    Ok(Bins { per_class, all })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub bins: usize,
    pub ndb: usize,
    pub jsd: f64,
    pub z_scores: Vec<f64>,
    pub n_train: usize,
    pub n_generated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub name: String,
    pub n_generated: usize,
    /// `None` when no clip was generated for the class.
    pub diversity: Option<BinReport>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    pub all_classes: BinReport,
    /// Fraction of all generated clips classified as their intended class.
    pub accuracy: f64,
    /// Mean of the per-class accuracies over classes present.
    pub accuracy_class_mean: f64,
    pub probe_test_accuracy: Option<f64>,
}

fn bin_report(bins: &BinModel, gen: &[&[f32]]) -> Result<BinReport> {
    let r = ndb(bins, gen)?;
    Ok(BinReport {
        bins: bins.k,
        ndb: r.count,
        jsd: jsd(&bins.proportions, &r.generated_proportions)?,
        z_scores: r.z_scores,
        n_train: bins.n_train,
        n_generated: gen.len(),
    })
}

pub fn evaluate_generation(
    generated: &[&MelSpec],
    intended: &[usize],
    bins: &Bins,
    probe: &Probe,
    class_names: &[String],
    probe_test_accuracy: Option<f64>,
) -> Result<EvalReport> {
    if generated.len() != intended.len() {
        return Err(Error::dim("one intended label per generated clip is required"));
    }
    if generated.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let nc = bins.per_class.len();
    if let Some(&l) = intended.iter().find(|&&l| l >= nc) {
        return Err(Error::InvalidArgument(format!("intended class {l} outside [0, {nc})")));
    }
    let predicted = probe.classify_many(generated)?;
    let mut classes = Vec::with_capacity(nc);
    let mut accs = Vec::new();
    for c in 0..nc {
        let idx: Vec<usize> = (0..generated.len()).filter(|&i| intended[i] == c).collect();
        let pts: Vec<&[f32]> = idx.iter().map(|&i| generated[i].values.as_slice()).collect();
        let (diversity, accuracy) = if idx.is_empty() {
            (None, None)
        } else {
            let hits = idx.iter().filter(|&&i| predicted[i] == c).count();
            let a = hits as f64 / idx.len() as f64;
            accs.push(a);
            (Some(bin_report(&bins.per_class[c], &pts)?), Some(a))
        };
        classes.push(ClassReport {
            class: c,
            name: class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}")),
            n_generated: idx.len(),
            diversity,
            accuracy,
        });
    }
    let all: Vec<&[f32]> = generated.iter().map(|m| m.values.as_slice()).collect();
    let hits = predicted.iter().zip(intended).filter(|(a, b)| a == b).count();
    Ok(EvalReport {
        classes,
        all_classes: bin_report(&bins.all, &all)?,
        accuracy: hits as f64 / generated.len() as f64,
        accuracy_class_mean: accs.iter().sum::<f64>() / accs.len() as f64,
        probe_test_accuracy,
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<14} {:>6} {:>6} {:>8} {:>10} {:>9}\n",
            "class", "n_gen", "bins", "NDB", "JSD", "accuracy"
        ));
        for c in &self.classes {
            match (&c.diversity, c.accuracy) {
                (Some(d), Some(a)) => s.push_str(&format!(
                    "{:<14} {:>6} {:>6} {:>8} {:>10.4} {:>9.3}\n",
                    c.name, c.n_generated, d.bins, d.ndb, d.jsd, a
                )),
                _ => s.push_str(&format!("{:<14} {:>6} {:>6} {:>8} {:>10} {:>9}\n", c.name, 0, "-", "absent", "-", "-")),
            }
        }
        let a = &self.all_classes;
        s.push_str(&format!(
            "{:<14} {:>6} {:>6} {:>8} {:>10.4} {:>9.3}\n",
            "all-classes", a.n_generated, a.bins, a.ndb, a.jsd, self.accuracy
        ));
        s.push_str(&format!("class-mean accuracy {:.3}\n", self.accuracy_class_mean));
        if let Some(t) = self.probe_test_accuracy {
            s.push_str(&format!("probe held-out accuracy {t:.3}\n"));
        }
        s
    }
}
