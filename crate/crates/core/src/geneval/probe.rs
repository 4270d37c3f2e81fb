use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{Conv2d, Linear};
use crate::autodiff::{AdamState, Bound, ParamSet, Tape, Tensor, Var};
use crate::dsp::MelSpec;
use crate::error::{Error, Result};
use crate::vqvae::Normalizer;
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub channels: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 16, 32],
            steps: 300,
            batch_size: 16,
            learning_rate: 2e-3,
        }
    }
}

/// Small convolutional classifier: stride-2 3x3 convolutions with ReLU,
/// global average pooling and a linear layer.
#[derive(Debug, Clone)]
pub struct Probe {
    cfg: ProbeConfig,
    num_classes: usize,
    shape: (usize, usize),
    params: ParamSet,
    convs: Vec<Conv2d>,
    head: Linear,
    norm: Normalizer,
}

impl Probe {
    pub fn new(cfg: &ProbeConfig, num_classes: usize, bands: usize, frames: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument("the probe needs at least two classes".into()));
        }
        if cfg.channels.is_empty() || cfg.batch_size == 0 {
            return Err(Error::Config("probe: channels and batch_size must be non-empty".into()));
        }
        let mut r = rng::rng(seed);
        let mut params = ParamSet::new();
        let mut cin = 1;
        let convs = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv2d::new(&mut params, &format!("probe.conv{i}"), cin, c, 3, 2, 1, &mut r);
                cin = c;
                conv
            })
            .collect();
        let head = Linear::new(&mut params, "probe.head", cin, num_classes, &mut r);
        Ok(Self {
            cfg: cfg.clone(),
            num_classes,
            shape: (bands, frames),
            params,
            convs,
            head,
            norm: Normalizer::default(),
        })
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.cfg
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn normalizer(&self) -> Normalizer {
        self.norm
    }

    pub fn set_normalizer(&mut self, n: Normalizer) {
        self.norm = n;
    }

    fn input(&self, mels: &[&MelSpec]) -> Result<Tensor> {
        let (h, w) = self.shape;
        let mut data = Vec::with_capacity(mels.len() * h * w);
        for m in mels {
            if (m.bands, m.frames) != (h, w) {
                return Err(Error::dim(format!(
                    "probe expects {h} x {w} mels, got {} x {}",
                    m.bands, m.frames
                )));
            }
            data.extend(m.values.iter().map(|&v| (v - self.norm.mean) / self.norm.std));
        }
        Tensor::new([mels.len(), 1, h, w], data)
    }

    fn logits(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(tape, p, h)?;
            h = tape.relu(h)?;
        }
        let h = tape.global_avg_pool(h)?;
        self.head.forward(tape, p, h)
    }

    pub fn class_scores(&self, mel: &MelSpec) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(self.input(&[mel])?);
        let l = self.logits(&mut tape, &p, x)?;
        Ok(tape.value(l).data().to_vec())
    }

    pub fn classify(&self, mel: &MelSpec) -> Result<usize> {
        let s = self.class_scores(mel)?;
        let mut best = 0;
        for (i, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn classify_many(&self, mels: &[&MelSpec]) -> Result<Vec<usize>> {
        par::map(mels.len(), |i| self.classify(mels[i])).into_iter().collect()
    }

    pub fn accuracy(&self, mels: &[&MelSpec], labels: &[usize]) -> Result<f64> {
        if mels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.classify_many(mels)?;
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / mels.len() as f64)
    }
}

/// Cross-entropy training on labelled mels.
pub fn train_probe_classifier(
    mels: &[&MelSpec],
    labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Probe> {
    let first = mels
        .first()
        .ok_or_else(|| Error::InvalidArgument("probe training set is empty".into()))?;
    if mels.len() != labels.len() {
        return Err(Error::dim("one label per mel is required"));
    }
    let mut seen = vec![false; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::InvalidArgument(format!("label {l} outside [0, {num_classes})")));
        }
        seen[l] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::InvalidArgument("the probe needs at least two classes".into()));
    }
    let mut probe = Probe::new(cfg, num_classes, first.bands, first.frames, rng::derive_seed(seed, &[0]))?;
    probe.set_normalizer(Normalizer::fit(mels.iter().copied()));
    let mut adam = AdamState::new(probe.params(), cfg.learning_rate);
    let mut order_rng = rng::rng(rng::derive_seed(seed, &[1]));
    let mut order: Vec<usize> = (0..mels.len()).collect();
    let mut cursor = order.len();
    let batch = cfg.batch_size.min(mels.len());
    for step in 0..cfg.steps {
        let mut picks = Vec::with_capacity(batch);
        while picks.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let bm: Vec<&MelSpec> = picks.iter().map(|&i| mels[i]).collect();
        let by: Vec<usize> = picks.iter().map(|&i| labels[i]).collect();
        let mut tape = Tape::new();
        let p = probe.params.bind(&mut tape);
        let x = tape.constant(probe.input(&bm)?);
        let logits = probe.logits(&mut tape, &p, x)?;
        let loss = tape
            .cross_entropy(logits, &by)
            .map_err(|e| Error::Training(format!("probe step {step}: {e}")))?;
        let g = tape.backward(loss)?;
        adam.step_from_tape(&mut probe.params, &p, &g)?;
    }
    Ok(probe)
}
