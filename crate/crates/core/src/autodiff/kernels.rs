//! Raw f32 kernels behind the differentiable operations.
//!
//! Batched kernels split work per sample. Per-sample weight gradients are
//! returned separately and summed in sample order by the caller.

use crate::par;

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// `a_t` / `b_t` mean the operand is stored transposed (`k x m` / `n x k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided 2-D correlation from an `h x w` grid with `c`
/// channels onto an `oh x ow` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output extent for a forward convolution, `None` if the kernel does not fit.
    pub fn forward(
        c: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        Some(Self {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    fn src_index(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds `src` (`c x h x w`) into `col` (`c*kh*kw x oh*ow`).
pub fn im2col(src: &[f32], g: &ConvGeom, col: &mut [f32]) {
    let ol = g.out_len();
    for ci in 0..g.c {
        let plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * ol..(row + 1) * ol];
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.src_index(oy, ki, g.h) {
                        None => line.fill(0.0),
                        Some(y) => {
                            let srow = &plane[y * g.w..(y + 1) * g.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.src_index(ox, kj, g.w) {
                                    Some(x) => srow[x],
                                    None => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` back onto `dst`.
pub fn col2im(col: &[f32], g: &ConvGeom, dst: &mut [f32]) {
    let ol = g.out_len();
    for ci in 0..g.c {
        let plane = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * ol..(row + 1) * ol];
                for oy in 0..g.oh {
                    let Some(y) = g.src_index(oy, ki, g.h) else {
                        continue;
                    };
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    let drow = &mut plane[y * g.w..(y + 1) * g.w];
                    for (ox, v) in line.iter().enumerate() {
                        if let Some(x) = g.src_index(ox, kj, g.w) {
                            drow[x] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `y[n] = w * im2col(x[n])` with `w` laid out `f x c x kh x kw`.
pub fn conv2d_forward(x: &[f32], w: &[f32], n: usize, f: usize, g: &ConvGeom) -> Vec<f32> {
    let (il, ol, pl) = (g.in_len(), g.out_len(), g.patch());
    let mut y = vec![0.0; n * f * ol];
    par::for_each_chunk(&mut y, f * ol, |s, out| {
        let mut col = vec![0.0; pl * ol];
        im2col(&x[s * il..(s + 1) * il], g, &mut col);
        gemm(f, pl, ol, w, false, &col, false, out, 0.0);
    });
    y
}

/// Returns `(dx, dw)`; either is `None` when not requested.
pub fn conv2d_backward(
    x: &[f32],
    w: &[f32],
    gy: &[f32],
    n: usize,
    f: usize,
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let (il, ol, pl) = (g.in_len(), g.out_len(), g.patch());
    let parts = par::map(n, |s| {
        let gys = &gy[s * f * ol..(s + 1) * f * ol];
        let dw = want_dw.then(|| {
            let mut col = vec![0.0; pl * ol];
            im2col(&x[s * il..(s + 1) * il], g, &mut col);
            let mut dw = vec![0.0; f * pl];
            gemm(f, ol, pl, gys, false, &col, true, &mut dw, 0.0);
            dw
        });
        let dx = want_dx.then(|| {
            let mut gcol = vec![0.0; pl * ol];
            gemm(pl, f, ol, w, true, gys, false, &mut gcol, 0.0);
            let mut dx = vec![0.0; il];
            col2im(&gcol, g, &mut dx);
            dx
        });
        (dx, dw)
    });
    collect_parts(parts, f * pl, want_dx, want_dw)
}

/// Transposed convolution. `g` describes the forward conv from the output
/// grid (`g.h x g.w`, `g.c` = output channels) onto the input grid
/// (`g.oh x g.ow`); `w` is laid out `cin x cout x kh x kw`.
pub fn conv_transpose2d_forward(
    x: &[f32],
    w: &[f32],
    n: usize,
    cin: usize,
    g: &ConvGeom,
) -> Vec<f32> {
    let (il, ol, pl) = (cin * g.out_len(), g.in_len(), g.patch());
    let hw = g.out_len();
    let mut y = vec![0.0; n * ol];
    par::for_each_chunk(&mut y, ol, |s, out| {
        let mut col = vec![0.0; pl * hw];
        gemm(pl, cin, hw, w, true, &x[s * il..(s + 1) * il], false, &mut col, 0.0);
        col2im(&col, g, out);
    });
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward(
    x: &[f32],
    w: &[f32],
    gy: &[f32],
    n: usize,
    cin: usize,
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let (il, ol, pl) = (cin * g.out_len(), g.in_len(), g.patch());
    let hw = g.out_len();
    let parts = par::map(n, |s| {
        let mut gcol = vec![0.0; pl * hw];
        im2col(&gy[s * ol..(s + 1) * ol], g, &mut gcol);
        let dx = want_dx.then(|| {
            let mut dx = vec![0.0; il];
            gemm(cin, pl, hw, w, false, &gcol, false, &mut dx, 0.0);
            dx
        });
        let dw = want_dw.then(|| {
            let mut dw = vec![0.0; cin * pl];
            gemm(cin, hw, pl, &x[s * il..(s + 1) * il], false, &gcol, true, &mut dw, 0.0);
            dw
        });
        (dx, dw)
    });
    collect_parts(parts, cin * pl, want_dx, want_dw)
}

fn collect_parts(
    parts: Vec<(Option<Vec<f32>>, Option<Vec<f32>>)>,
    w_len: usize,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let mut dx = want_dx.then(Vec::new);
    let mut dw = want_dw.then(|| vec![0.0; w_len]);
    for (px, pw) in parts {
        if let (Some(acc), Some(p)) = (dx.as_mut(), px) {
            acc.extend_from_slice(&p);
        }
        if let (Some(acc), Some(p)) = (dw.as_mut(), pw) {
            acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
    }
    (dx, dw)
}

/// Single-head causal self-attention over `s` positions with `d` features,
/// all operands laid out `n x d x s`. Position `i` attends to `j <= i`.
/// Returns the output and the attention probabilities (`n x s x s`).
pub fn causal_attention_forward(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    n: usize,
    d: usize,
    s: usize,
) -> (Vec<f32>, Vec<f32>) {
    let scale = 1.0 / (d as f32).sqrt();
    let per = par::map(n, |b| {
        let off = b * d * s;
        let (qb, kb, vb) = (&q[off..off + d * s], &k[off..off + d * s], &v[off..off + d * s]);
        let mut p = vec![0.0; s * s];
        gemm(s, d, s, qb, true, kb, false, &mut p, 0.0);
        for i in 0..s {
            let row = &mut p[i * s..(i + 1) * s];
            let mut max = f32::NEG_INFINITY;
            for a in row[..=i].iter_mut() {
                *a *= scale;
                max = max.max(*a);
            }
            let mut sum = 0.0;
            for a in row[..=i].iter_mut() {
                *a = (*a - max).exp();
                sum += *a;
            }
            let inv = 1.0 / sum;
            row[..=i].iter_mut().for_each(|a| *a *= inv);
            row[i + 1..].fill(0.0);
        }
        let mut o = vec![0.0; d * s];
        gemm(d, s, s, vb, false, &p, true, &mut o, 0.0);
        (o, p)
    });
    let mut out = Vec::with_capacity(n * d * s);
    let mut probs = Vec::with_capacity(n * s * s);
    for (o, p) in per {
        out.extend_from_slice(&o);
        probs.extend_from_slice(&p);
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub fn causal_attention_backward(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    probs: &[f32],
    go: &[f32],
    n: usize,
    d: usize,
    s: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let scale = 1.0 / (d as f32).sqrt();
    let per = par::map(n, |b| {
        let off = b * d * s;
        let (qb, kb, vb) = (&q[off..off + d * s], &k[off..off + d * s], &v[off..off + d * s]);
        let gob = &go[off..off + d * s];
        let p = &probs[b * s * s..(b + 1) * s * s];
        let mut dv = vec![0.0; d * s];
        gemm(d, s, s, gob, false, p, false, &mut dv, 0.0);
        let mut da = vec![0.0; s * s];
        gemm(s, d, s, gob, true, vb, false, &mut da, 0.0);
        for i in 0..s {
            let prow = &p[i * s..(i + 1) * s];
            let row = &mut da[i * s..(i + 1) * s];
            let dot: f32 = prow[..=i].iter().zip(&row[..=i]).map(|(a, b)| a * b).sum();
            for j in 0..=i {
                row[j] = prow[j] * (row[j] - dot) * scale;
            }
            row[i + 1..].fill(0.0);
        }
        let mut dq = vec![0.0; d * s];
        gemm(d, s, s, kb, false, &da, true, &mut dq, 0.0);
        let mut dk = vec![0.0; d * s];
        gemm(d, s, s, qb, false, &da, false, &mut dk, 0.0);
        (dq, dk, dv)
    });
    let mut dq = Vec::with_capacity(n * d * s);
    let mut dk = Vec::with_capacity(n * d * s);
    let mut dv = Vec::with_capacity(n * d * s);
    for (a, b, c) in per {
        dq.extend_from_slice(&a);
        dk.extend_from_slice(&b);
        dv.extend_from_slice(&c);
    }
    (dq, dk, dv)
}
