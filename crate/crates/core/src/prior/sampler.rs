use super::{causal_mask, ClassCondition, PriorModel};
use crate::autodiff::nn::Conv2d;
use crate::autodiff::sigmoid;
use crate::error::Result;
use crate::index_grid::IndexGrid;

/// Per-tap weights of a masked convolution: `(dr, dc, W[cout][cin])`.
struct TapConv {
    taps: Vec<(isize, isize, Vec<f32>)>,
    bias: Vec<f32>,
}

impl TapConv {
    fn new(model: &PriorModel, conv: &Conv2d, mask: Option<&[f32]>) -> Self {
        let w = model.params.get(conv.weight);
        let [cout, cin, k, _] = w.shape()[..] else { unreachable!() };
        let c = (k / 2) as isize;
        let wd = w.data();
        let mut taps = Vec::new();
        for r in 0..k {
            for col in 0..k {
                if mask.is_some_and(|m| m[r * k + col] == 0.0) {
                    continue;
                }
                let mut m = vec![0.0; cout * cin];
                for o in 0..cout {
                    for i in 0..cin {
                        m[o * cin + i] = wd[((o * cin + i) * k + r) * k + col];
                    }
                }
                taps.push((r as isize - c, col as isize - c, m));
            }
        }
        Self {
            taps,
            bias: model.params.get(conv.bias).data().to_vec(),
        }
    }

    /// Output at `(row, col)` from `input` stored position-major with `cin`
    /// values per position.
    fn at(&self, input: &[f32], cin: usize, rows: usize, cols: usize, row: usize, col: usize, out: &mut [f32]) {
        out.copy_from_slice(&self.bias);
        for (dr, dc, m) in &self.taps {
            let (r, c) = (row as isize + dr, col as isize + dc);
            if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                continue;
            }
            let x = &input[(r as usize * cols + c as usize) * cin..][..cin];
            for (o, acc) in out.iter_mut().enumerate() {
                *acc += m[o * cin..][..cin].iter().zip(x).map(|(a, b)| a * b).sum::<f32>();
            }
        }
    }
}

struct LayerState {
    f: TapConv,
    g: TapConv,
    cond_f: Vec<f32>,
    cond_g: Vec<f32>,
    out: Vec<f32>,
}

struct AttnState {
    q: TapConv,
    k: TapConv,
    v: TapConv,
    out: TapConv,
    keys: Vec<f32>,
    values: Vec<f32>,
    result: Vec<f32>,
}

/// Position-by-position evaluation of a [`PriorModel`]. After `i` pushes,
/// [`Sampler::next_logits`] gives the logits for position `i`; each call
/// touches only the layer outputs at that position.
pub struct Sampler<'a> {
    model: &'a PriorModel,
    d: usize,
    emb: Vec<f32>,
    layers: Vec<LayerState>,
    attn: Option<AttnState>,
    head: TapConv,
    position: Vec<f32>,
    seq: Vec<u16>,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a PriorModel, cond: ClassCondition) -> Result<Self> {
        let d = model.cfg.d_model;
        let s = model.seq_len();
        let ks = model.cfg.kernel_size;
        let class_row = |id| {
            let t = model.params.get(id).data();
            t[cond.class() * d..][..d].to_vec()
        };
        let layers = model
            .layers
            .iter()
            .map(|l| {
                let mask = causal_mask(ks, l.include_centre);
                LayerState {
                    f: TapConv::new(model, &l.f, Some(&mask)),
                    g: TapConv::new(model, &l.g, Some(&mask)),
                    cond_f: class_row(l.cond_f),
                    cond_g: class_row(l.cond_g),
                    out: vec![0.0; s * d],
                }
            })
            .collect();
        let attn = model.attention.as_ref().map(|a| AttnState {
            q: TapConv::new(model, &a.q, None),
            k: TapConv::new(model, &a.k, None),
            v: TapConv::new(model, &a.v, None),
            out: TapConv::new(model, &a.out, None),
            keys: vec![0.0; s * d],
            values: vec![0.0; s * d],
            result: vec![0.0; s * d],
        });
        // position bias stored [d, rows, cols]; keep it position-major
        let pt = model.params.get(model.position).data();
        let mut position = vec![0.0; s * d];
        for c in 0..d {
            for i in 0..s {
                position[i * d + c] = pt[c * s + i];
            }
        }
        Ok(Self {
            model,
            d,
            emb: vec![0.0; s * d],
            layers,
            attn,
            head: TapConv::new(model, &model.head, None),
            position,
            seq: Vec::with_capacity(s),
        })
    }

    pub fn position(&self) -> usize {
        self.seq.len()
    }

    /// Logits for the next position given everything pushed so far.
    pub fn next_logits(&mut self) -> Vec<f32> {
        let (rows, cols) = self.model.grid_shape();
        let i = self.seq.len();
        assert!(i < rows * cols, "grid already complete");
        let (row, col) = (i / cols, i % cols);
        let d = self.d;
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        for l in 0..self.layers.len() {
            let (before, rest) = self.layers.split_at_mut(l);
            let layer = &mut rest[0];
            let input: &[f32] = if l == 0 { &self.emb } else { &before[l - 1].out };
            layer.f.at(input, d, rows, cols, row, col, &mut a);
            layer.g.at(input, d, rows, cols, row, col, &mut b);
            let out = &mut layer.out[i * d..][..d];
            for c in 0..d {
                let y = (a[c] + layer.cond_f[c]).tanh() * sigmoid(b[c] + layer.cond_g[c]);
                out[c] = if l == 0 {
                    y + self.position[i * d + c]
                } else {
                    input[i * d + c] + y
                };
            }
        }
        let last = &self.layers.last().expect("at least one layer").out;
        let mut x: Vec<f32> = last[i * d..][..d].to_vec();
        if let Some(at) = &mut self.attn {
            let mut q = vec![0.0; d];
            at.q.at(last, d, rows, cols, row, col, &mut q);
            at.k.at(last, d, rows, cols, row, col, &mut at.keys[i * d..][..d]);
            at.v.at(last, d, rows, cols, row, col, &mut at.values[i * d..][..d]);
            let scale = 1.0 / (d as f32).sqrt();
            let scores: Vec<f32> = (0..=i)
                .map(|j| {
                    let kj = &at.keys[j * d..][..d];
                    q.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale
                })
                .collect();
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let e: Vec<f32> = scores.iter().map(|&s| (s - max).exp()).collect();
            let inv = 1.0 / e.iter().sum::<f32>();
            let o = &mut at.result[i * d..][..d];
            o.fill(0.0);
            for (j, &w) in e.iter().enumerate() {
                let vj = &at.values[j * d..][..d];
                for c in 0..d {
                    o[c] += w * inv * vj[c];
                }
            }
            let mut proj = vec![0.0; d];
            at.out.at(&at.result, d, rows, cols, row, col, &mut proj);
            for c in 0..d {
                x[c] += proj[c];
            }
        }
        for v in &mut x {
            *v = v.max(0.0);
        }
        let k = self.model.codebook_size;
        let mut logits = vec![0.0; k];
        // the head is 1x1, so it reads only `x`
        self.head.at(&x, d, 1, 1, 0, 0, &mut logits);
        logits
    }

    /// Records the index chosen at the current position.
    pub fn push(&mut self, index: usize) {
        let i = self.seq.len();
        let d = self.d;
        let table = self.model.params.get(self.model.embedding).data();
        self.emb[i * d..][..d].copy_from_slice(&table[index * d..][..d]);
        self.seq.push(index as u16);
    }

    pub fn into_grid(self) -> Result<IndexGrid> {
        let (rows, cols) = self.model.grid_shape();
        IndexGrid::new(rows, cols, self.seq)
    }
}
