use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BiasMode {
    /// `b: [C]` broadcast over batch and trailing axes.
    Channel,
    /// `b: [N, C]` broadcast over trailing axes.
    Sample,
    /// `b: x.shape[1..]` broadcast over the batch axis.
    Batch,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, geom: ConvGeom },
    Bias { x: Var, b: Var, mode: BiasMode },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Mean(Var),
    Mse(Var, Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f32> },
    Lookup { table: Var, indices: Vec<usize> },
    StraightThrough { z: Var },
    MatMul(Var, Var),
    GlobalAvgPool(Var),
    CausalAttention { q: Var, k: Var, v: Var, probs: Vec<f32> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations. Nodes are appended as operations
/// run, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Whether each ReLU input is positive, in recording order. Two tapes
    /// of the same graph with equal patterns lie on the same linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(a) = n.op {
                out.extend(self.value(a).data().iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; it participates in gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(false))
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(true))
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], what: &str) -> Result<Var> {
        value.ensure_finite(what)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    /// Strided 2-D correlation with symmetric zero padding.
    /// `x: [N, C, H, W]`, `w: [F, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4("conv2d input")?;
        let (f, wc, kh, kw) = self.value(w).dims4("conv2d kernel")?;
        if wc != c {
            return Err(Error::dim(format!(
                "conv2d: input has {c} channels, kernel expects {wc}"
            )));
        }
        let geom = ConvGeom::forward(c, h, wd, kh, kw, stride, padding).ok_or_else(|| {
            Error::dim(format!(
                "conv2d: kernel {kh}x{kw} does not fit {h}x{wd} with padding {padding}, stride {stride}"
            ))
        })?;
        let y = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), n, f, &geom);
        let t = Tensor::new([n, f, geom.oh, geom.ow], y)?;
        self.push(t, Op::Conv2d { x, w, geom }, &[x, w], "conv2d")
    }

    /// Transposed convolution, the adjoint of [`Tape::conv2d`] with the same
    /// stride and padding. `x: [N, C, H, W]`, `w: [C, F, kh, kw]`; output
    /// extent is `(H - 1) * stride + kh - 2 * padding`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4("conv_transpose2d input")?;
        let (wc, f, kh, kw) = self.value(w).dims4("conv_transpose2d kernel")?;
        if wc != c {
            return Err(Error::dim(format!(
                "conv_transpose2d: input has {c} channels, kernel expects {wc}"
            )));
        }
        if stride == 0 || kh < stride || kw < stride {
            return Err(Error::dim(format!(
                "conv_transpose2d: kernel {kh}x{kw} smaller than stride {stride}"
            )));
        }
        let (oh, ow) = ((h - 1) * stride + kh, (wd - 1) * stride + kw);
        if oh <= 2 * padding || ow <= 2 * padding {
            return Err(Error::dim("conv_transpose2d: padding crops the whole output"));
        }
        let (oh, ow) = (oh - 2 * padding, ow - 2 * padding);
        let geom = ConvGeom::forward(f, oh, ow, kh, kw, stride, padding)
            .filter(|g| g.oh == h && g.ow == wd)
            .ok_or_else(|| Error::dim("conv_transpose2d: inconsistent geometry"))?;
        let y = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            n,
            c,
            &geom,
        );
        let t = Tensor::new([n, f, oh, ow], y)?;
        self.push(t, Op::ConvTranspose2d { x, w, geom }, &[x, w], "conv_transpose2d")
    }

    fn bias(&mut self, x: Var, b: Var, mode: BiasMode) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(b).shape();
        let ok = match mode {
            BiasMode::Channel => xs.len() >= 2 && bs == [xs[1]],
            BiasMode::Sample => xs.len() >= 2 && bs == [xs[0], xs[1]],
            BiasMode::Batch => xs.len() >= 2 && bs == &xs[1..],
        };
        if !ok {
            return Err(Error::dim(format!(
                "{mode:?} bias of shape {bs:?} does not fit {xs:?}"
            )));
        }
        let (n, c, rest) = self.value(x).dims3();
        let bd = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            let (s, ch) = (i / (c * rest), (i / rest) % c);
            *v += match mode {
                BiasMode::Channel => bd[ch],
                BiasMode::Sample => bd[s * c + ch],
                BiasMode::Batch => bd[i % (c * rest)],
            };
        }
        debug_assert_eq!(out.len(), n * c * rest);
        let t = Tensor::new(xs, out)?;
        self.push(t, Op::Bias { x, b, mode }, &[x, b], "bias")
    }

    /// Adds `b: [C]` to every `[N, C, ...]` position.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.bias(x, b, BiasMode::Channel)
    }

    /// Adds a per-sample channel bias `b: [N, C]`.
    pub fn add_sample_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.bias(x, b, BiasMode::Sample)
    }

    /// Adds `b` (shaped like one sample of `x`) to every sample.
    pub fn add_batch_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.bias(x, b, BiasMode::Batch)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, what: &str, f: impl Fn(f32, f32) -> f32) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(t, op, &[a, b], what)
    }

    fn unary(&mut self, a: Var, op: Op, what: &str, f: impl Fn(f32) -> f32) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(t, op, &[a], what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        self.unary(a, Op::Scale(a, s), "scale", |x| x * s)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), "relu", |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), "tanh", f32::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let d = self.value(a).data();
        let m = (d.iter().map(|&x| x as f64).sum::<f64>() / d.len() as f64) as f32;
        self.push(Tensor::scalar(m), Op::Mean(a), &[a], "mean")
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let s: f64 = da
            .iter()
            .zip(db)
            .map(|(&x, &y)| {
                let d = (x - y) as f64;
                d * d
            })
            .sum();
        let m = (s / da.len() as f64) as f32;
        self.push(Tensor::scalar(m), Op::Mse(a, b), &[a, b], "mse")
    }

    /// Mean negative log-softmax at `targets`. `logits: [N, K, ...]` with the
    /// class axis second; `targets` holds one class per `(n, position)` in
    /// row-major order.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lt = self.value(logits);
        if lt.rank() < 2 {
            return Err(Error::dim("cross_entropy expects [N, K, ...] logits"));
        }
        let (n, k, rest) = lt.dims3();
        if targets.len() != n * rest {
            return Err(Error::dim(format!(
                "cross_entropy: {} targets for {} positions",
                targets.len(),
                n * rest
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Index(format!("target {t} outside [0, {k})")));
        }
        let data = lt.data();
        let mut probs = vec![0.0f32; data.len()];
        let mut total = 0.0f64;
        for s in 0..n {
            for p in 0..rest {
                let at = |c: usize| (s * k + c) * rest + p;
                let max = (0..k).map(|c| data[at(c)]).fold(f32::NEG_INFINITY, f32::max);
                let mut z = 0.0f64;
                for c in 0..k {
                    let e = ((data[at(c)] - max) as f64).exp();
                    probs[at(c)] = e as f32;
                    z += e;
                }
                for c in 0..k {
                    probs[at(c)] = (probs[at(c)] as f64 / z) as f32;
                }
                let t = targets[s * rest + p];
                total += z.ln() - (data[at(t)] - max) as f64;
            }
        }
        let loss = (total / (n * rest) as f64) as f32;
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push(Tensor::scalar(loss), op, &[logits], "cross_entropy")
    }

    /// Gathers rows of `table: [K, D]` into a channel-first grid:
    /// indices shaped `index_shape = [N, ...]` produce `[N, D, ...]`.
    pub fn lookup(&mut self, table: Var, indices: &[usize], index_shape: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let [k, d] = tt.shape()[..] else {
            return Err(Error::dim("lookup table must be [K, D]"));
        };
        if index_shape.is_empty() || index_shape.iter().product::<usize>() != indices.len() {
            return Err(Error::dim(format!(
                "lookup: {} indices do not fill {index_shape:?}",
                indices.len()
            )));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::Index(format!("index {i} outside [0, {k})")));
        }
        let n = index_shape[0];
        let rest = indices.len() / n;
        let td = tt.data();
        let mut out = vec![0.0; n * d * rest];
        for s in 0..n {
            for p in 0..rest {
                let row = &td[indices[s * rest + p] * d..][..d];
                for (c, &v) in row.iter().enumerate() {
                    out[(s * d + c) * rest + p] = v;
                }
            }
        }
        let mut shape = vec![n, d];
        shape.extend_from_slice(&index_shape[1..]);
        let t = Tensor::new(shape, out)?;
        let op = Op::Lookup {
            table,
            indices: indices.to_vec(),
        };
        self.push(t, op, &[table], "lookup")
    }

    /// Takes the value of `r` and routes the incoming gradient unchanged to
    /// `z` (the straight-through estimator). `r` receives no gradient.
    pub fn straight_through(&mut self, z: Var, r: Var) -> Result<Var> {
        self.same_shape(z, r, "straight_through")?;
        let t = self.value(r).clone().with_grad(false);
        self.push(t, Op::StraightThrough { z }, &[z], "straight_through")
    }

    /// `a: [M, K]` times `b: [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (&[m, ka], &[kb, nn]) = (self.value(a).shape(), self.value(b).shape()) else {
            return Err(Error::dim("matmul expects rank-2 operands"));
        };
        if ka != kb {
            return Err(Error::dim(format!("matmul: inner dims {ka} and {kb} differ")));
        }
        let mut out = vec![0.0; m * nn];
        kernels::gemm(m, ka, nn, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let t = Tensor::new([m, nn], out)?;
        self.push(t, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `[N, C, ...]` to `[N, C]` by averaging the trailing axes.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        if xt.rank() < 3 {
            return Err(Error::dim("global_avg_pool expects [N, C, ...]"));
        }
        let (n, c, rest) = xt.dims3();
        let out = xt
            .data()
            .chunks(rest)
            .map(|ch| (ch.iter().map(|&v| v as f64).sum::<f64>() / rest as f64) as f32)
            .collect();
        let t = Tensor::new([n, c], out)?;
        self.push(t, Op::GlobalAvgPool(x), &[x], "global_avg_pool")
    }

    /// Single-head causal self-attention over the flattened trailing axes of
    /// `[N, D, ...]` operands; position `i` attends to positions `j <= i`.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        self.same_shape(q, k, "causal_attention")?;
        self.same_shape(q, v, "causal_attention")?;
        let qt = self.value(q);
        if qt.rank() < 3 {
            return Err(Error::dim("causal_attention expects [N, D, ...]"));
        }
        let (n, d, s) = qt.dims3();
        let (out, probs) = kernels::causal_attention_forward(
            qt.data(),
            self.value(k).data(),
            self.value(v).data(),
            n,
            d,
            s,
        );
        let t = Tensor::new(qt.shape().to_vec(), out)?;
        self.push(t, Op::CausalAttention { q, k, v, probs }, &[q, k, v], "causal_attention")
    }

    /// Reverse pass from the one-element tensor `loss`. Each node is visited
    /// once, in reverse recording order; gradients of shared inputs add up.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            // Keep the gradient for inspection of intermediate values.
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, delta: Vec<f32>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.data_mut().iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape"));
            }
        }
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let val = |v: Var| self.value(v).data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, geom } => {
                let n = self.value(*x).shape()[0];
                let f = self.value(*w).shape()[0];
                let (dx, dw) =
                    kernels::conv2d_backward(val(*x), val(*w), gd, n, f, geom, rg(*x), rg(*w));
                if let Some(dx) = dx {
                    self.accum(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accum(grads, *w, dw);
                }
            }
            Op::ConvTranspose2d { x, w, geom } => {
                let n = self.value(*x).shape()[0];
                let c = self.value(*x).shape()[1];
                let (dx, dw) = kernels::conv_transpose2d_backward(
                    val(*x),
                    val(*w),
                    gd,
                    n,
                    c,
                    geom,
                    rg(*x),
                    rg(*w),
                );
                if let Some(dx) = dx {
                    self.accum(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accum(grads, *w, dw);
                }
            }
            Op::Bias { x, b, mode } => {
                self.accum(grads, *x, gd.to_vec());
                if rg(*b) {
                    let (_, c, rest) = self.value(*x).dims3();
                    let mut db = vec![0.0; self.value(*b).len()];
                    for (i, &v) in gd.iter().enumerate() {
                        let (s, ch) = (i / (c * rest), (i / rest) % c);
                        let j = match mode {
                            BiasMode::Channel => ch,
                            BiasMode::Sample => s * c + ch,
                            BiasMode::Batch => i % (c * rest),
                        };
                        db[j] += v;
                    }
                    self.accum(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, gd.to_vec());
                self.accum(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, gd.to_vec());
                self.accum(grads, *b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let d = gd.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    self.accum(grads, *a, d);
                }
                if rg(*b) {
                    let d = gd.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    self.accum(grads, *b, d);
                }
            }
            Op::Scale(a, s) => self.accum(grads, *a, gd.iter().map(|g| g * s).collect()),
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accum(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.accum(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                self.accum(grads, *a, d);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accum(grads, *a, vec![gd[0] / n as f32; n]);
            }
            Op::Mse(a, b) => {
                let n = self.value(*a).len() as f32;
                let k = 2.0 * gd[0] / n;
                let diff: Vec<f32> = val(*a).iter().zip(val(*b)).map(|(x, y)| k * (x - y)).collect();
                if rg(*b) {
                    self.accum(grads, *b, diff.iter().map(|v| -v).collect());
                }
                self.accum(grads, *a, diff);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (_, k, rest) = self.value(*logits).dims3();
                let scale = gd[0] / targets.len() as f32;
                let mut d: Vec<f32> = probs.iter().map(|p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    let (s, p) = (i / rest, i % rest);
                    d[(s * k + t) * rest + p] -= scale;
                }
                self.accum(grads, *logits, d);
            }
            Op::Lookup { table, indices } => {
                let (k, dim) = {
                    let s = self.value(*table).shape();
                    (s[0], s[1])
                };
                let n = node.value.shape()[0];
                let rest = indices.len() / n;
                let mut d = vec![0.0; k * dim];
                for s in 0..n {
                    for p in 0..rest {
                        let row = indices[s * rest + p];
                        for c in 0..dim {
                            d[row * dim + c] += gd[(s * dim + c) * rest + p];
                        }
                    }
                }
                self.accum(grads, *table, d);
            }
            Op::StraightThrough { z } => self.accum(grads, *z, gd.to_vec()),
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if rg(*a) {
                    let mut d = vec![0.0; m * k];
                    kernels::gemm(m, n, k, gd, false, val(*b), true, &mut d, 0.0);
                    self.accum(grads, *a, d);
                }
                if rg(*b) {
                    let mut d = vec![0.0; k * n];
                    kernels::gemm(k, m, n, val(*a), true, gd, false, &mut d, 0.0);
                    self.accum(grads, *b, d);
                }
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, rest) = self.value(*x).dims3();
                let d = gd
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g / rest as f32, rest))
                    .collect();
                self.accum(grads, *x, d);
            }
            Op::CausalAttention { q, k, v, probs } => {
                let (n, d, s) = self.value(*q).dims3();
                let (dq, dk, dv) =
                    kernels::causal_attention_backward(val(*q), val(*k), val(*v), probs, gd, n, d, s);
                self.accum(grads, *q, dq);
                self.accum(grads, *k, dk);
                self.accum(grads, *v, dv);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
