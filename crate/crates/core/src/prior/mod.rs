//! Class-conditional autoregressive prior over raster-ordered index grids:
//! gated masked convolutions, optional causal self-attention, and an
//! incremental ancestral sampler.

mod sampler;
mod train;

pub use sampler::Sampler;
pub use train::{train_prior, PriorStepLog, PriorTraining};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::Conv2d;
use crate::autodiff::{Bound, ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::index_grid::IndexGrid;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub d_model: usize,
    pub layers: usize,
    /// Odd kernel size of the masked convolutions.
    pub kernel_size: usize,
    pub attention: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub temperature: f32,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            layers: 6,
            kernel_size: 3,
            attention: true,
            steps: 3000,
            batch_size: 8,
            learning_rate: 1e-3,
            temperature: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("prior: {m}")));
        if self.d_model == 0 || self.layers == 0 {
            return bad("d_model and layers must be positive");
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad("kernel_size must be odd");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be finite and non-negative");
        }
        Ok(())
    }
}

/// One-hot class vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCondition {
    class: usize,
    num_classes: usize,
}

impl ClassCondition {
    pub fn new(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::dim(format!(
                "class {class} outside [0, {num_classes})"
            )));
        }
        Ok(Self { class, num_classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn one_hot(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.num_classes];
        v[self.class] = 1.0;
        v
    }
}

/// Which taps of a `k x k` kernel see the past. Type A excludes the centre.
pub fn causal_mask(k: usize, include_centre: bool) -> Vec<f32> {
    let c = k / 2;
    let mut m = vec![0.0; k * k];
    for r in 0..k {
        for col in 0..k {
            let past = r < c || (r == c && (col < c || (col == c && include_centre)));
            if past {
                m[r * k + col] = 1.0;
            }
        }
    }
    m
}

/// Gated masked convolution `tanh(Wf * x + cf) ⊙ σ(Wg * x + cg)` where the
/// `c` terms are per-class biases.
#[derive(Debug, Clone)]
struct GatedLayer {
    f: Conv2d,
    g: Conv2d,
    cond_f: ParamId,
    cond_g: ParamId,
    include_centre: bool,
}

#[derive(Debug, Clone)]
struct AttentionBlock {
    q: Conv2d,
    k: Conv2d,
    v: Conv2d,
    out: Conv2d,
}

#[derive(Debug, Clone)]
pub struct PriorModel {
    cfg: PriorConfig,
    codebook_size: usize,
    num_classes: usize,
    rows: usize,
    cols: usize,
    params: ParamSet,
    embedding: ParamId,
    position: ParamId,
    layers: Vec<GatedLayer>,
    attention: Option<AttentionBlock>,
    head: Conv2d,
}

impl PriorModel {
    pub fn new(
        cfg: &PriorConfig,
        codebook_size: usize,
        num_classes: usize,
        rows: usize,
        cols: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if codebook_size < 2 || num_classes == 0 || rows == 0 || cols == 0 {
            return Err(Error::Config(
                "prior needs K >= 2, at least one class and a non-empty grid".into(),
            ));
        }
        let d = cfg.d_model;
        let ks = cfg.kernel_size;
        let pad = ks / 2;
        let mut r = rng::rng(seed);
        let mut params = ParamSet::new();
        let embedding = params.add_uniform("embedding", &[codebook_size, d], 1.0, &mut r);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let name = format!("layer{l}");
            layers.push(GatedLayer {
                f: Conv2d::new(&mut params, &format!("{name}.f"), d, d, ks, 1, pad, &mut r),
                g: Conv2d::new(&mut params, &format!("{name}.g"), d, d, ks, 1, pad, &mut r),
                cond_f: params.add_kaiming(format!("{name}.cond_f"), &[num_classes, d], num_classes, &mut r),
                cond_g: params.add_kaiming(format!("{name}.cond_g"), &[num_classes, d], num_classes, &mut r),
                include_centre: l > 0,
            });
        }
        let position = params.add_zeros("position", &[d, rows, cols]);
        let attention = cfg.attention.then(|| AttentionBlock {
            q: Conv2d::new(&mut params, "attn.q", d, d, 1, 1, 0, &mut r),
            k: Conv2d::new(&mut params, "attn.k", d, d, 1, 1, 0, &mut r),
            v: Conv2d::new(&mut params, "attn.v", d, d, 1, 1, 0, &mut r),
            out: Conv2d::new(&mut params, "attn.out", d, d, 1, 1, 0, &mut r),
        });
        let head = Conv2d::new(&mut params, "head", d, codebook_size, 1, 1, 0, &mut r);
        // start close to uniform over the codebook
        let hw = params.get_mut(head.weight);
        for v in hw.data_mut() {
            *v *= 0.01;
        }
        Ok(Self {
            cfg: cfg.clone(),
            codebook_size,
            num_classes,
            rows,
            cols,
            params,
            embedding,
            position,
            layers,
            attention,
            head,
        })
    }

    pub fn config(&self) -> &PriorConfig {
        &self.cfg
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn seq_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn head_bias_id(&self) -> ParamId {
        self.head.bias
    }

    pub fn head_weight_id(&self) -> ParamId {
        self.head.weight
    }

    fn check_inputs(&self, grids: &[&IndexGrid], conds: &[ClassCondition]) -> Result<()> {
        if grids.is_empty() || grids.len() != conds.len() {
            return Err(Error::dim(format!(
                "{} grids with {} conditions",
                grids.len(),
                conds.len()
            )));
        }
        for g in grids {
            if (g.rows(), g.cols()) != (self.rows, self.cols) {
                return Err(Error::dim(format!(
                    "grid is {} x {}, prior expects {} x {}",
                    g.rows(),
                    g.cols(),
                    self.rows,
                    self.cols
                )));
            }
            g.check_range(self.codebook_size)?;
        }
        if let Some(c) = conds.iter().find(|c| c.num_classes != self.num_classes) {
            return Err(Error::dim(format!(
                "condition over {} classes, prior has {}",
                c.num_classes, self.num_classes
            )));
        }
        Ok(())
    }

    /// Logits `[N, K, rows, cols]` on the tape.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, grids: &[&IndexGrid], conds: &[ClassCondition]) -> Result<Var> {
        self.check_inputs(grids, conds)?;
        let n = grids.len();
        let idx: Vec<usize> = grids.iter().flat_map(|g| g.flatten().iter().map(|&i| i as usize)).collect();
        let hot: Vec<f32> = conds.iter().flat_map(|c| c.one_hot()).collect();
        let h = tape.constant(Tensor::new([n, self.num_classes], hot)?);
        let ks = self.cfg.kernel_size;
        let mut x = tape.lookup(p[self.embedding], &idx, &[n, self.rows, self.cols])?;
        for (l, layer) in self.layers.iter().enumerate() {
            let mask = Tensor::new([1, 1, ks, ks], causal_mask(ks, layer.include_centre))?;
            let mask = tape.constant(broadcast_mask(&mask, self.cfg.d_model)?);
            let gate = |tape: &mut Tape, conv: &Conv2d, cond: ParamId| -> Result<Var> {
                let w = tape.mul(p[conv.weight], mask)?;
                let a = tape.conv2d(x, w, 1, ks / 2)?;
                let a = tape.add_channel_bias(a, p[conv.bias])?;
                let c = tape.matmul(h, p[cond])?;
                tape.add_sample_bias(a, c)
            };
            let a = gate(tape, &layer.f, layer.cond_f)?;
            let b = gate(tape, &layer.g, layer.cond_g)?;
            let a = tape.tanh(a)?;
            let b = tape.sigmoid(b)?;
            let y = tape.mul(a, b)?;
            x = if l == 0 {
                tape.add_batch_bias(y, p[self.position])?
            } else {
                tape.add(x, y)?
            };
        }
        if let Some(att) = &self.attention {
            let q = att.q.forward(tape, p, x)?;
            let k = att.k.forward(tape, p, x)?;
            let v = att.v.forward(tape, p, x)?;
            let o = tape.causal_attention(q, k, v)?;
            let o = att.out.forward(tape, p, o)?;
            x = tape.add(x, o)?;
        }
        let x = tape.relu(x)?;
        self.head.forward(tape, p, x)
    }

    /// Mean cross-entropy of every position given its predecessors.
    pub fn loss_graph(&self, tape: &mut Tape, p: &Bound, grids: &[&IndexGrid], conds: &[ClassCondition]) -> Result<Var> {
        let logits = self.forward(tape, p, grids, conds)?;
        let targets: Vec<usize> = grids.iter().flat_map(|g| g.to_usize()).collect();
        tape.cross_entropy(logits, &targets)
    }

    /// Logits as `N x K` (position-major) for one grid.
    pub fn logits(&self, grid: &IndexGrid, cond: ClassCondition) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &p, &[grid], &[cond])?;
        let (k, s) = (self.codebook_size, self.seq_len());
        let v = tape.value(out).data();
        let mut t = vec![0.0; s * k];
        for c in 0..k {
            for i in 0..s {
                t[i * k + c] = v[c * s + i];
            }
        }
        Ok(t)
    }

    pub fn loss(&self, grids: &[&IndexGrid], conds: &[ClassCondition]) -> Result<f32> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let l = self.loss_graph(&mut tape, &p, grids, conds)?;
        Ok(tape.value(l).item())
    }

    /// Ancestral sample in raster order. Temperature 0 takes the argmax.
    pub fn sample(&self, cond: ClassCondition, temperature: f32, seed: u64) -> Result<IndexGrid> {
        if cond.num_classes != self.num_classes {
            return Err(Error::dim("condition class count differs from the prior"));
        }
        let mut s = Sampler::new(self, cond)?;
        let mut r = rng::rng(seed);
        for _ in 0..self.seq_len() {
            let logits = s.next_logits();
            let choice = draw(&logits, temperature, &mut r);
            s.push(choice);
        }
        s.into_grid()
    }

    /// Samples `count` grids; grid `i` uses seed `derive_seed(seed, [i])`.
    pub fn sample_many(&self, cond: ClassCondition, temperature: f32, seed: u64, count: usize) -> Result<Vec<IndexGrid>> {
        crate::par::map(count, |i| self.sample(cond, temperature, rng::derive_seed(seed, &[i as u64])))
            .into_iter()
            .collect()
    }

    /// Sum of per-position log-probabilities, scored incrementally.
    pub fn log_likelihood(&self, grid: &IndexGrid, cond: ClassCondition) -> Result<f64> {
        self.check_inputs(&[grid], &[cond])?;
        let mut s = Sampler::new(self, cond)?;
        let mut total = 0.0;
        for &y in grid.flatten() {
            let logits = s.next_logits();
            total += log_softmax_at(&logits, y as usize);
            s.push(y as usize);
        }
        Ok(total)
    }
}

fn broadcast_mask(mask: &Tensor, d: usize) -> Result<Tensor> {
    let kk = mask.len();
    let side = mask.shape()[2];
    let mut data = Vec::with_capacity(d * d * kk);
    for _ in 0..d * d {
        data.extend_from_slice(mask.data());
    }
    Tensor::new([d, d, side, side], data)
}

pub(crate) fn log_softmax_at(logits: &[f32], i: usize) -> f64 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let z: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum();
    logits[i] as f64 - max - z.ln()
}

/// Softmax probabilities of `logits / temperature`.
pub fn softmax(logits: &[f32], temperature: f32) -> Vec<f64> {
    let t = temperature as f64;
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = logits.iter().map(|&v| ((v as f64 - max) / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn draw(logits: &[f32], temperature: f32, r: &mut impl Rng) -> usize {
    if temperature == 0.0 {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let probs = softmax(logits, temperature);
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
