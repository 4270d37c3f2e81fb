//! Multi-scale convolutional VQ autoencoder over log-mel spectrograms.

mod loss;
mod quantize;
mod train;

pub use loss::{vqvae_loss, LossTerms, LossVars};
pub use quantize::{nearest_indices, perplexity, Codebook};
pub use train::{train_vqvae, VqStepLog, VqVaeTraining};

use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{Conv2d, ConvTranspose2d, ResidualBlock};
use crate::autodiff::{Bound, ParamId, ParamSet, Tape, Tensor, Var};
use crate::dsp::{DspParams, MelSpec};
use crate::error::{Error, Result};
use crate::index_grid::IndexGrid;
use crate::{par, rng};

/// Kernel used when the multi-scale encoder is switched off.
pub const SINGLE_SCALE_KERNEL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub scl_kernel_sizes: Vec<usize>,
    /// Stride-2 sublayers per branch; the compression factor m.
    pub sublayers_per_scl: usize,
    pub residual_blocks: usize,
    pub mscs_enabled: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            scl_kernel_sizes: vec![2, 4, 6, 8],
            sublayers_per_scl: 2,
            residual_blocks: 2,
            mscs_enabled: true,
        }
    }
}

impl EncoderConfig {
    /// Kernel sizes of the active branches.
    pub fn active_kernels(&self) -> Vec<usize> {
        if self.mscs_enabled {
            self.scl_kernel_sizes.clone()
        } else {
            vec![SINGLE_SCALE_KERNEL]
        }
    }

    pub fn downsample(&self) -> usize {
        1 << self.sublayers_per_scl
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqVaeConfig {
    pub codebook_size: usize,
    /// Codeword depth; also the channel width of the encoder and decoder trunk.
    pub codeword_dim: usize,
    pub beta: f32,
    pub encoder: EncoderConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            codebook_size: 512,
            codeword_dim: 64,
            beta: 0.25,
            encoder: EncoderConfig::default(),
            steps: 2000,
            batch_size: 8,
            learning_rate: 3e-4,
        }
    }
}

impl VqVaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("vqvae: {m}")));
        if self.codebook_size < 2 || self.codebook_size > 1 << 16 {
            return bad("codebook_size must lie in [2, 65536]");
        }
        if self.codeword_dim == 0 {
            return bad("codeword_dim must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be a finite non-negative number");
        }
        if self.encoder.sublayers_per_scl == 0 {
            return bad("sublayers_per_scl must be positive");
        }
        if self.encoder.mscs_enabled && self.encoder.scl_kernel_sizes.is_empty() {
            return bad("scl_kernel_sizes is empty");
        }
        if self.encoder.scl_kernel_sizes.iter().any(|&k| k < 2) {
            return bad("kernel sizes must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Affine map between mel values and the network's input scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub mean: f32,
    pub std: f32,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl Normalizer {
    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a MelSpec> + Clone) -> Self {
        let (mut n, mut sum) = (0usize, 0.0f64);
        for m in mels.clone() {
            n += m.values.len();
            sum += m.values.iter().map(|&v| v as f64).sum::<f64>();
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = mels
            .into_iter()
            .flat_map(|m| &m.values)
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        Self {
            mean: mean as f32,
            std: var.sqrt().max(1e-3) as f32,
        }
    }
}

/// Padding that halves an even extent for a stride-2 kernel of size `k`.
pub fn halving_padding(k: usize) -> usize {
    (k - 1) / 2
}

#[derive(Debug, Clone)]
struct Scl {
    kernel: usize,
    sublayers: Vec<Conv2d>,
    res: Vec<ResidualBlock>,
}

impl Scl {
    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, conv) in self.sublayers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h)?;
            }
            h = conv.forward(tape, p, h)?;
        }
        for r in &self.res {
            h = r.forward(tape, p, h)?;
        }
        Ok(h)
    }
}

/// Continuous latents, their quantized values and the codeword indices.
#[derive(Debug, Clone)]
pub struct LatentGrid {
    pub z: Tensor,
    pub r: Tensor,
    pub indices: Vec<IndexGrid>,
}

#[derive(Debug, Clone)]
pub struct VqVae {
    cfg: VqVaeConfig,
    input: (usize, usize),
    params: ParamSet,
    branches: Vec<Scl>,
    dec_res: Vec<ResidualBlock>,
    dec_up: Vec<ConvTranspose2d>,
    codebook: ParamId,
    norm: Normalizer,
}

impl VqVae {
    /// Model for `bands x frames` inputs; both must be divisible by the
    /// downsampling factor.
    pub fn new(cfg: &VqVaeConfig, bands: usize, frames: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.encoder.downsample();
        if !bands.is_multiple_of(f) || !frames.is_multiple_of(f) || bands == 0 || frames == 0 {
            return Err(Error::Config(format!(
                "input {bands} x {frames} is not divisible by the downsampling factor {f}"
            )));
        }
        let d = cfg.codeword_dim;
        let mut rng = rng::rng(seed);
        let mut params = ParamSet::new();
        let mut branches = Vec::new();
        for k in cfg.encoder.active_kernels() {
            let pad = halving_padding(k);
            let sublayers = (0..cfg.encoder.sublayers_per_scl)
                .map(|j| {
                    let cin = if j == 0 { 1 } else { d };
                    Conv2d::new(&mut params, &format!("enc.scl{k}.sub{j}"), cin, d, k, 2, pad, &mut rng)
                })
                .collect();
            let res = (0..cfg.encoder.residual_blocks)
                .map(|j| ResidualBlock::new(&mut params, &format!("enc.scl{k}.res{j}"), d, &mut rng))
                .collect();
            branches.push(Scl {
                kernel: k,
                sublayers,
                res,
            });
        }
        let dec_res = (0..cfg.encoder.residual_blocks)
            .map(|j| ResidualBlock::new(&mut params, &format!("dec.res{j}"), d, &mut rng))
            .collect();
        let m = cfg.encoder.sublayers_per_scl;
        let dec_up = (0..m)
            .map(|j| {
                let cout = if j + 1 == m { 1 } else { d };
                ConvTranspose2d::new(&mut params, &format!("dec.up{j}"), d, cout, 4, 2, 1, &mut rng)
            })
            .collect();
        let k = cfg.codebook_size;
        let codebook = params.add_uniform("codebook", &[k, d], 1.0 / k as f32, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            input: (bands, frames),
            params,
            branches,
            dec_res,
            dec_up,
            codebook,
            norm: Normalizer::default(),
        })
    }

    pub fn config(&self) -> &VqVaeConfig {
        &self.cfg
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input
    }

    pub fn latent_shape(&self) -> (usize, usize) {
        let f = self.cfg.encoder.downsample();
        (self.input.0 / f, self.input.1 / f)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with("enc."))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn branch_kernels(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.kernel).collect()
    }

    pub fn codebook_id(&self) -> ParamId {
        self.codebook
    }

    pub fn codewords(&self) -> &Tensor {
        self.params.get(self.codebook)
    }

    pub fn normalizer(&self) -> Normalizer {
        self.norm
    }

    pub fn set_normalizer(&mut self, norm: Normalizer) {
        self.norm = norm;
    }

    /// Stacks mels into a normalized `[N, 1, bands, frames]` input.
    pub fn input_tensor(&self, mels: &[&MelSpec]) -> Result<Tensor> {
        let (h, w) = self.input;
        let mut data = Vec::with_capacity(mels.len() * h * w);
        for m in mels {
            if (m.bands, m.frames) != (h, w) || m.values.len() != h * w {
                return Err(Error::dim(format!(
                    "mel is {} x {}, model expects {h} x {w}",
                    m.bands, m.frames
                )));
            }
            data.extend(m.values.iter().map(|&v| (v - self.norm.mean) / self.norm.std));
        }
        Tensor::new([mels.len(), 1, h, w], data)
    }

    /// Normalized input `[N, 1, H, W]` to continuous latents `[N, D, H/4, W/4]`;
    /// branch outputs are summed.
    pub fn encoder_forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 || (shape[2], shape[3]) != self.input {
            return Err(Error::dim(format!(
                "encoder expects [N, 1, {}, {}], got {shape:?}",
                self.input.0, self.input.1
            )));
        }
        let mut sum: Option<Var> = None;
        for b in &self.branches {
            let h = b.forward(tape, p, x)?;
            sum = Some(match sum {
                None => h,
                Some(s) => tape.add(s, h)?,
            });
        }
        Ok(sum.expect("at least one branch"))
    }

    /// Quantized latents to normalized mel values, `[N, 1, H, W]`.
    pub fn decoder_forward(&self, tape: &mut Tape, p: &Bound, r: Var) -> Result<Var> {
        let shape = tape.value(r).shape().to_vec();
        let (lh, lw) = self.latent_shape();
        if shape.len() != 4 || shape[1] != self.cfg.codeword_dim || (shape[2], shape[3]) != (lh, lw) {
            return Err(Error::dim(format!(
                "decoder expects [N, {}, {lh}, {lw}], got {shape:?}",
                self.cfg.codeword_dim
            )));
        }
        let mut h = r;
        for b in &self.dec_res {
            h = b.forward(tape, p, h)?;
        }
        for up in &self.dec_up {
            h = tape.relu(h)?;
            h = up.forward(tape, p, h)?;
        }
        Ok(h)
    }

    /// Encoder, quantizer, straight-through decoder input and loss on one
    /// batch; reconstruction is scored against the normalized input. Returns
    /// the loss handles and the chosen indices.
    pub fn loss_graph(&self, tape: &mut Tape, p: &Bound, mels: &[&MelSpec]) -> Result<(LossVars, Vec<usize>)> {
        let x_in = tape.constant(self.input_tensor(mels)?);
        let z = self.encoder_forward(tape, p, x_in)?;
        let zt = tape.value(z);
        let idx = nearest_indices(tape.value(p[self.codebook]), zt)?;
        let zs = zt.shape().to_vec();
        let idx_shape = [zs[0], zs[2], zs[3]];
        let r = tape.lookup(p[self.codebook], &idx, &idx_shape)?;
        let dec_in = tape.straight_through(z, r)?;
        let x_hat = self.decoder_forward(tape, p, dec_in)?;
        let l = vqvae_loss(tape, x_in, x_hat, z, r, self.cfg.beta)?;
        Ok((l, idx))
    }

    /// Loss components on a batch with frozen parameters.
    pub fn evaluate_loss(&self, mels: &[&MelSpec]) -> Result<LossTerms> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let (l, _) = self.loss_graph(&mut tape, &p, mels)?;
        Ok(l.values(&tape))
    }

    pub fn encode(&self, mels: &[&MelSpec]) -> Result<LatentGrid> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(self.input_tensor(mels)?);
        let z = self.encoder_forward(&mut tape, &p, x)?;
        let z = tape.value(z).clone();
        let idx = nearest_indices(self.codewords(), &z)?;
        let r = quantize::gather(self.codewords(), &idx, z.shape())?;
        let (lh, lw) = self.latent_shape();
        let indices = idx
            .chunks(lh * lw)
            .map(|c| IndexGrid::from_usize(lh, lw, c))
            .collect::<Result<_>>()?;
        Ok(LatentGrid { z, r, indices })
    }

    pub fn encode_to_indices(&self, mel: &MelSpec) -> Result<IndexGrid> {
        Ok(self.encode(&[mel])?.indices.remove(0))
    }

    /// Mel spectrograms (denormalized) from index grids; indices must lie
    /// below K.
    pub fn decode_indices(&self, grids: &[&IndexGrid], dsp: &DspParams) -> Result<Vec<MelSpec>> {
        let (lh, lw) = self.latent_shape();
        let mut idx = Vec::with_capacity(grids.len() * lh * lw);
        for g in grids {
            if (g.rows(), g.cols()) != (lh, lw) {
                return Err(Error::dim(format!(
                    "index grid is {} x {}, model expects {lh} x {lw}",
                    g.rows(),
                    g.cols()
                )));
            }
            g.check_range(self.cfg.codebook_size)?;
            idx.extend(g.flatten().iter().map(|&i| i as usize));
        }
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let r = tape.lookup(p[self.codebook], &idx, &[grids.len(), lh, lw])?;
        let out = self.decoder_forward(&mut tape, &p, r)?;
        let (h, w) = self.input;
        let Normalizer { mean, std } = self.norm;
        Ok(tape
            .value(out)
            .data()
            .chunks(h * w)
            .map(|c| MelSpec {
                bands: h,
                frames: w,
                values: c.iter().map(|&v| v * std + mean).collect(),
                params: dsp.clone(),
            })
            .collect())
    }

    pub fn decode_from_indices(&self, grid: &IndexGrid, dsp: &DspParams) -> Result<MelSpec> {
        Ok(self.decode_indices(&[grid], dsp)?.remove(0))
    }

    pub fn reconstruct(&self, mel: &MelSpec) -> Result<MelSpec> {
        let g = self.encode_to_indices(mel)?;
        self.decode_from_indices(&g, &mel.params)
    }

    /// Encodes many mels, one sample per work item.
    pub fn encode_many(&self, mels: &[MelSpec]) -> Result<Vec<IndexGrid>> {
        par::map(mels.len(), |i| self.encode_to_indices(&mels[i]))
            .into_iter()
            .collect()
    }

    /// Decodes many grids, one grid per work item.
    pub fn decode_many(&self, grids: &[IndexGrid], dsp: &DspParams) -> Result<Vec<MelSpec>> {
        par::map(grids.len(), |i| self.decode_from_indices(&grids[i], dsp))
            .into_iter()
            .collect()
    }
}
