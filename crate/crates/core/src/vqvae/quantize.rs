use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::par;

/// Nearest-codeword index for every cell of `z: [N, D, ...]` against
/// `codewords: [K, D]`. Ties go to the smaller index. Cells are returned in
/// `[N, ...]` order.
pub fn nearest_indices(codewords: &Tensor, z: &Tensor) -> Result<Vec<usize>> {
    let [k, d] = codewords.shape()[..] else {
        return Err(Error::dim("codebook must be [K, D]"));
    };
    let (n, zd, rest) = z.dims3();
    if zd != d {
        return Err(Error::dim(format!("latent depth {zd} differs from codeword depth {d}")));
    }
    let cb = codewords.data();
    let zv = z.data();
    let cells = n * rest;
    // gather cells into contiguous rows once
    let mut rows = vec![0.0f32; cells * d];
    for s in 0..n {
        for c in 0..d {
            let src = &zv[(s * d + c) * rest..][..rest];
            for (p, &v) in src.iter().enumerate() {
                rows[(s * rest + p) * d + c] = v;
            }
        }
    }
    const CHUNK: usize = 64;
    let chunks = cells.div_ceil(CHUNK);
    let parts = par::map(chunks, |ci| {
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(cells);
        (lo..hi)
            .map(|cell| nearest_row(cb, k, d, &rows[cell * d..][..d]))
            .collect::<Vec<_>>()
    });
    Ok(parts.into_iter().flatten().collect())
}

fn nearest_row(cb: &[f32], k: usize, d: usize, x: &[f32]) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for i in 0..k {
        let c = &cb[i * d..][..d];
        let dist: f32 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best_d {
            best_d = dist;
            best = i;
        }
    }
    best
}

/// Codeword table with per-codeword usage counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    codewords: Tensor,
    usage: Vec<u64>,
}

impl Codebook {
    pub fn new(codewords: Tensor) -> Result<Self> {
        if codewords.rank() != 2 {
            return Err(Error::dim("codebook must be [K, D]"));
        }
        codewords.ensure_finite("codebook")?;
        let k = codewords.shape()[0];
        Ok(Self {
            codewords,
            usage: vec![0; k],
        })
    }

    pub fn size(&self) -> usize {
        self.codewords.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.codewords.shape()[1]
    }

    pub fn codewords(&self) -> &Tensor {
        &self.codewords
    }

    pub fn usage(&self) -> &[u64] {
        &self.usage
    }

    pub fn record(&mut self, indices: &[usize]) {
        for &i in indices {
            self.usage[i] += 1;
        }
    }

    pub fn reset_usage(&mut self) {
        self.usage.fill(0);
    }

    /// Codewords never selected since the last reset.
    pub fn dead_codes(&self) -> Vec<usize> {
        (0..self.size()).filter(|&i| self.usage[i] == 0).collect()
    }

    /// `(r, indices)` where `r` has the shape of `z` and holds the selected
    /// codewords. Usage counters are incremented.
    pub fn quantize(&mut self, z: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let idx = nearest_indices(&self.codewords, z)?;
        let r = gather(&self.codewords, &idx, z.shape())?;
        self.record(&idx);
        Ok((r, idx))
    }
}

/// Channel-first gather of codewords for indices laid out as `[N, ...]`.
pub(crate) fn gather(codewords: &Tensor, idx: &[usize], shape: &[usize]) -> Result<Tensor> {
    let d = codewords.shape()[1];
    let n = shape[0];
    let rest = idx.len() / n;
    let cb = codewords.data();
    let mut out = vec![0.0; idx.len() * d];
    for s in 0..n {
        for p in 0..rest {
            let row = &cb[idx[s * rest + p] * d..][..d];
            for (c, &v) in row.iter().enumerate() {
                out[(s * d + c) * rest + p] = v;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// `exp(entropy)` of the empirical index distribution.
pub fn perplexity(indices: &[usize], k: usize) -> f64 {
    let mut counts = vec![0u64; k];
    for &i in indices {
        counts[i] += 1;
    }
    let n = indices.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.exp()
}
