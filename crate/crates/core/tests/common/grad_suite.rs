//! Finite-difference checks of every differentiable tape operation and of the
//! composed VQ-VAE loss. Step 1e-3, tolerance 1e-3, 20 seeded instances each.
//! Each check panics on failure.

use dtfr_core::autodiff::{analytic_grad, grad_check, Tape, Tensor, Var};
use dtfr_core::dsp::MelSpec;
use dtfr_core::error::Result;
use dtfr_core::rng;
use dtfr_core::vqvae::{EncoderConfig, VqVae, VqVaeConfig};
use rand::Rng;

const SEEDS: u64 = 20;
const STEP: f32 = 1e-3;
const TOL: f32 = 1e-3;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values with magnitude in [0.1, 1]; keeps kinks out of the stencil.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m: f32 = r.random_range(0.1..1.0);
            if r.random() { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// `sum(w * y)` for fixed random `w`: a scalar whose gradient is `w` pulled
/// back through `y`.
fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let n = t.value(y).len() as f32;
    let w = t.constant(random(&shape, seed ^ 0xabcdef));
    let p = t.mul(y, w)?;
    let m = t.mean(p)?;
    t.scale(m, n)
}

fn check<F>(name: &str, point: impl Fn(u64) -> Tensor, f: F)
where
    F: Fn(&mut Tape, Var, u64) -> Result<Var>,
{
    for seed in 0..SEEDS {
        let x = point(seed);
        let err = grad_check(|t, v| f(t, v, seed), &x, STEP).unwrap();
        assert!(err < TOL, "{name} seed {seed}: error {err}");
    }
}

pub fn elementwise_ops() {
    let s = [2, 3, 4];
    check("add", |k| random(&s, k), |t, x, k| {
        let c = t.constant(random(&s, k + 100));
        let y = t.add(x, c)?;
        project(t, y, k)
    });
    check("add self", |k| random(&s, k), |t, x, k| {
        let y = t.add(x, x)?;
        project(t, y, k)
    });
    check("sub", |k| random(&s, k), |t, x, k| {
        let c = t.constant(random(&s, k + 100));
        let a = t.sub(c, x)?;
        let b = t.sub(x, c)?;
        let y = t.mul(a, b)?;
        project(t, y, k)
    });
    check("mul", |k| random(&s, k), |t, x, k| {
        let c = t.constant(random(&s, k + 100));
        let y = t.mul(x, c)?;
        let y = t.mul(y, x)?;
        project(t, y, k)
    });
    check("scale", |k| random(&s, k), |t, x, k| {
        let y = t.scale(x, -1.7)?;
        project(t, y, k)
    });
    check("relu", |k| away_from_zero(&s, k), |t, x, k| {
        let y = t.relu(x)?;
        project(t, y, k)
    });
    check("tanh", |k| random(&s, k), |t, x, k| {
        let y = t.scale(x, 2.0)?;
        let y = t.tanh(y)?;
        project(t, y, k)
    });
    check("sigmoid", |k| random(&s, k), |t, x, k| {
        let y = t.scale(x, 3.0)?;
        let y = t.sigmoid(y)?;
        project(t, y, k)
    });
    check("mean", |k| random(&s, k), |t, x, _| {
        let y = t.mul(x, x)?;
        let m = t.mean(y)?;
        t.scale(m, 5.0)
    });
}

/// `x * sg[x]` differentiates like `x * c` with `c` frozen at `x`.
pub fn detach_blocks_the_gradient() {
    for seed in 0..SEEDS {
        let x = random(&[5], seed);
        let g = analytic_grad(
            &|t: &mut Tape, v| {
                let d = t.detach(v);
                let y = t.mul(v, d)?;
                project(t, y, seed)
            },
            &x,
        )
        .unwrap();
        let frozen = |t: &mut Tape, v: Var| {
            let c = t.constant(x.clone());
            let y = t.mul(v, c)?;
            project(t, y, seed)
        };
        assert_eq!(g.data(), analytic_grad(&frozen, &x).unwrap().data());
        assert!(grad_check(frozen, &x, STEP).unwrap() < TOL);
    }
}

pub fn losses() {
    let s = [3, 4, 2];
    check("mse first", |k| random(&s, k), |t, x, k| {
        let c = t.constant(random(&s, k + 100));
        let m = t.mse(x, c)?;
        t.scale(m, 10.0)
    });
    check("mse second", |k| random(&s, k), |t, x, k| {
        let c = t.constant(random(&s, k + 100));
        let m = t.mse(c, x)?;
        t.scale(m, 10.0)
    });
    check("cross_entropy", |k| random(&[2, 5, 3], k), |t, x, k| {
        let mut r = rng::rng(k + 7);
        let targets: Vec<usize> = (0..6).map(|_| r.random_range(0..5)).collect();
        let y = t.scale(x, 2.0)?;
        t.cross_entropy(y, &targets)
    });
}

pub fn convolutions() {
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
        check("conv2d input", |k| random(&[1, 2, 5, 6], k), |t, x, k| {
            let w = t.constant(random(&[2, 2, 3, 3], k + 100));
            let y = t.conv2d(x, w, stride, pad)?;
            project(t, y, k)
        });
        check("conv2d kernel", |k| random(&[2, 2, 3, 3], k), |t, w, k| {
            let x = t.constant(random(&[1, 2, 5, 6], k + 100));
            let y = t.conv2d(x, w, stride, pad)?;
            project(t, y, k)
        });
    }
    check("conv2d even kernel", |k| random(&[1, 2, 8, 8], k), |t, x, k| {
        let w = t.constant(random(&[2, 2, 4, 4], k + 100));
        let y = t.conv2d(x, w, 2, 1)?;
        project(t, y, k)
    });
    check("conv_transpose2d input", |k| random(&[1, 2, 3, 3], k), |t, x, k| {
        let w = t.constant(random(&[2, 2, 4, 4], k + 100));
        let y = t.conv_transpose2d(x, w, 2, 1)?;
        project(t, y, k)
    });
    check("conv_transpose2d kernel", |k| random(&[2, 2, 4, 4], k), |t, w, k| {
        let x = t.constant(random(&[1, 2, 3, 3], k + 100));
        let y = t.conv_transpose2d(x, w, 2, 1)?;
        project(t, y, k)
    });
}

pub fn biases_and_pooling() {
    let xs = [2, 3, 2, 2];
    check("channel bias value", |k| random(&xs, k), |t, x, k| {
        let b = t.constant(random(&[3], k + 100));
        let y = t.add_channel_bias(x, b)?;
        let y = t.mul(y, y)?;
        project(t, y, k)
    });
    check("channel bias", |k| random(&[3], k), |t, b, k| {
        let x = t.constant(random(&xs, k + 100));
        let y = t.add_channel_bias(x, b)?;
        let y = t.mul(y, y)?;
        project(t, y, k)
    });
    check("sample bias", |k| random(&[2, 3], k), |t, b, k| {
        let x = t.constant(random(&xs, k + 100));
        let y = t.add_sample_bias(x, b)?;
        let y = t.mul(y, y)?;
        project(t, y, k)
    });
    check("batch bias", |k| random(&[3, 2, 2], k), |t, b, k| {
        let x = t.constant(random(&xs, k + 100));
        let y = t.add_batch_bias(x, b)?;
        let y = t.mul(y, y)?;
        project(t, y, k)
    });
    check("global_avg_pool", |k| random(&xs, k), |t, x, k| {
        let y = t.mul(x, x)?;
        let y = t.global_avg_pool(y)?;
        project(t, y, k)
    });
}

pub fn matmul_both_operands() {
    check("matmul left", |k| random(&[3, 4], k), |t, a, k| {
        let b = t.constant(random(&[4, 5], k + 100));
        let y = t.matmul(a, b)?;
        project(t, y, k)
    });
    check("matmul right", |k| random(&[4, 5], k), |t, b, k| {
        let a = t.constant(random(&[3, 4], k + 100));
        let y = t.matmul(a, b)?;
        project(t, y, k)
    });
}

pub fn lookup_and_straight_through() {
    check("lookup table", |k| random(&[6, 3], k), |t, table, k| {
        let mut r = rng::rng(k + 9);
        let idx: Vec<usize> = (0..8).map(|_| r.random_range(0..6)).collect();
        let y = t.lookup(table, &idx, &[2, 2, 2])?;
        let y = t.mul(y, y)?;
        project(t, y, k)
    });
    // The straight-through output takes the value of r but the derivative
    // of z, so it is checked against the surrogate z + (r - z) with the
    // difference frozen.
    for seed in 0..SEEDS {
        let z = random(&[2, 3, 2], seed);
        let r = random(&[2, 3, 2], seed + 100);
        let analytic = analytic_grad(
            &|t: &mut Tape, zv| {
                let rv = t.constant(r.clone());
                let y = t.straight_through(zv, rv)?;
                let y = t.mul(y, y)?;
                project(t, y, seed)
            },
            &z,
        )
        .unwrap();
        let diff: Vec<f32> = r.data().iter().zip(z.data()).map(|(a, b)| a - b).collect();
        let offset = Tensor::new(z.shape().to_vec(), diff).unwrap();
        let surrogate = |t: &mut Tape, zv: Var| {
            let o = t.constant(offset.clone());
            let y = t.add(zv, o)?;
            let w = t.constant(r.clone());
            let y = t.mul(y, w)?;
            let y = t.scale(y, 2.0)?;
            project(t, y, seed)
        };
        let expect = analytic_grad(&surrogate, &z).unwrap();
        assert_eq!(analytic.data(), expect.data(), "seed {seed}");
        let err = grad_check(surrogate, &z, STEP).unwrap();
        assert!(err < TOL, "straight_through surrogate seed {seed}: {err}");
    }
}

pub fn causal_attention_all_operands() {
    let s = [2, 3, 5];
    for which in 0..3 {
        check("causal_attention", |k| random(&s, k), |t, x, k| {
            let mut ops = [
                t.constant(random(&s, k + 100)),
                t.constant(random(&s, k + 200)),
                t.constant(random(&s, k + 300)),
            ];
            ops[which] = x;
            let y = t.causal_attention(ops[0], ops[1], ops[2])?;
            project(t, y, k)
        });
    }
    check("causal_attention shared", |k| random(&[1, 4, 2, 3], k), |t, x, k| {
        let y = t.causal_attention(x, x, x)?;
        project(t, y, k)
    });
}

/// The composed loss goes through an argmin and stop-gradients. With the
/// chosen indices, `sg[z]` and `sg[r]` frozen it becomes the smooth
///   mse(x, D(r0 + z - z0)) + mse(z0, r) + beta * mse(z, r0)
/// whose ordinary gradient the training graph must reproduce.
pub fn composed_vqvae_loss_matches_frozen_surrogate() {
    let cfg = VqVaeConfig {
        codebook_size: 8,
        codeword_dim: 3,
        encoder: EncoderConfig {
            scl_kernel_sizes: vec![2, 4],
            residual_blocks: 1,
            ..Default::default()
        },
        ..Default::default()
    };
    for seed in 0..SEEDS {
        let mel = &random_mel(seed);
        let mut model = VqVae::new(&cfg, mel.bands, mel.frames, seed).unwrap();
        spread_codebook(&mut model, seed);

        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let (loss, idx) = model.loss_graph(&mut tape, &bound, &[mel]).unwrap();
        let grads = tape.backward(loss.total).unwrap();
        let analytic: Vec<Vec<f32>> = bound
            .vars()
            .iter()
            .zip(model.params().iter())
            .map(|(&v, (_, p))| grads.get(v).map_or(vec![0.0; p.len()], |g| g.data().to_vec()))
            .collect();

        let x = model.input_tensor(&[mel]).unwrap();
        let (z0, r0) = {
            let lat = model.encode(&[mel]).unwrap();
            assert_eq!(
                lat.indices[0].to_usize(),
                idx,
                "encode and the loss graph choose the same codewords"
            );
            (lat.z, lat.r)
        };
        let beta = cfg.beta;
        let surrogate = |m: &VqVae| -> (f32, Vec<bool>) {
            let mut t = Tape::new();
            let p = m.params().bind_frozen(&mut t);
            let xv = t.constant(x.clone());
            let z = m.encoder_forward(&mut t, &p, xv).unwrap();
            let zc = t.constant(z0.clone());
            let rc = t.constant(r0.clone());
            let dz = t.sub(z, zc).unwrap();
            let dec_in = t.add(rc, dz).unwrap();
            let y = m.decoder_forward(&mut t, &p, dec_in).unwrap();
            let recon = t.mse(xv, y).unwrap();
            let s = z0.shape();
            let r = t.lookup(p[m.codebook_id()], &idx, &[s[0], s[2], s[3]]).unwrap();
            let cb = t.mse(zc, r).unwrap();
            let cm = t.mse(z, rc).unwrap();
            let cm = t.scale(cm, beta).unwrap();
            let a = t.add(recon, cb).unwrap();
            let total = t.add(a, cm).unwrap();
            (t.value(total).item(), t.relu_pattern())
        };
        let (at_point, pattern) = surrogate(&model);
        assert!((at_point - tape.value(loss.total).item()).abs() < 1e-5 * at_point.abs().max(1.0));

        let mut r = rng::rng(seed + 1000);
        let mut probe = model.clone();
        let ids: Vec<_> = model.params().ids().collect();
        let (mut checked, mut straddled) = (0, 0);
        while checked < 12 {
            let id = ids[r.random_range(0..ids.len())];
            let n = model.params().get(id).len();
            let i = r.random_range(0..n);
            let orig = model.params().get(id).data()[i];
            probe.params_mut().get_mut(id).data_mut()[i] = orig + STEP;
            let (fp, pp) = surrogate(&probe);
            probe.params_mut().get_mut(id).data_mut()[i] = orig - STEP;
            let (fm, pm) = surrogate(&probe);
            probe.params_mut().get_mut(id).data_mut()[i] = orig;
            // A stencil that crosses a ReLU kink measures no derivative.
            if pp != pattern || pm != pattern {
                straddled += 1;
                assert!(straddled < 40, "seed {seed}: too many stencils cross a kink");
                continue;
            }
            checked += 1;
            let (fp, fm) = (fp as f64, fm as f64);
            let numeric = ((fp - fm) / (2.0 * STEP as f64)) as f32;
            let a = analytic[id.index()][i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            assert!(
                err < TOL,
                "seed {seed} {}[{i}]: analytic {a} numeric {numeric}",
                model.params().name(id)
            );
        }
    }
}

/// Dense random 8 x 16 input; spreads activations away from ReLU kinks,
/// which the flat floor regions of real mels pile up.
fn random_mel(seed: u64) -> MelSpec {
    MelSpec {
        bands: 8,
        frames: 16,
        values: random(&[128], seed + 500).into_data(),
        params: super::toy_dsp(),
    }
}

/// Moves codewords onto encoder outputs so that every instance has
/// non-trivial codebook and commitment terms, with a clear nearest codeword.
fn spread_codebook(model: &mut VqVae, seed: u64) {
    let lat = model.encode(&[&random_mel(seed + 50)]).unwrap();
    let s = lat.z.shape().to_vec();
    let (d, cells) = (s[1], s[2] * s[3]);
    let k = model.config().codebook_size;
    let mut r = rng::rng(seed);
    let id = model.codebook_id();
    let book = model.params_mut().get_mut(id).data_mut();
    for c in 0..k {
        let cell = r.random_range(0..cells);
        for j in 0..d {
            book[c * d + j] = lat.z.data()[j * cells + cell] * 0.8 + r.random_range(-0.1..0.1);
        }
    }
}

pub const ALL: &[(&str, fn())] = &[
    ("elementwise_ops", elementwise_ops),
    ("detach_blocks_the_gradient", detach_blocks_the_gradient),
    ("losses", losses),
    ("convolutions", convolutions),
    ("biases_and_pooling", biases_and_pooling),
    ("matmul_both_operands", matmul_both_operands),
    ("lookup_and_straight_through", lookup_and_straight_through),
    ("causal_attention_all_operands", causal_attention_all_operands),
    ("composed_vqvae_loss_matches_frozen_surrogate", composed_vqvae_loss_matches_frozen_surrogate),
];
