use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dtfr_core::autodiff::{Tape, Tensor};
use dtfr_core::dsp::{synth_dataset, DspParams, MelFrontEnd, Recipe};
use dtfr_core::par::{self, ExecMode};
use dtfr_core::rng;
use dtfr_core::vqvae::{nearest_indices, VqVae, VqVaeConfig};
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn modes() -> Vec<(&'static str, ExecMode)> {
    let mut v = vec![("sequential", ExecMode::Sequential)];
    #[cfg(feature = "parallel")]
    v.push(("parallel", ExecMode::Parallel));
    v
}

fn conv(c: &mut Criterion) {
    let x = random(&[8, 16, 40, 172], 1);
    let w = random(&[16, 16, 3, 3], 2);
    let mut g = c.benchmark_group("conv2d_forward");
    for (name, mode) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_mode(mode, || {
                    let mut t = Tape::new();
                    let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
                    t.conv2d(xv, wv, 1, 1).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn quantize(c: &mut Criterion) {
    let book = random(&[512, 16], 3);
    let z = random(&[8, 16, 20, 86], 4);
    let mut g = c.benchmark_group("nearest_codeword");
    for (name, mode) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_mode(mode, || nearest_indices(&book, &z).unwrap()))
        });
    }
    g.finish();
}

fn mels(c: &mut Criterion) {
    let p = DspParams::default();
    let fe = MelFrontEnd::new(p.clone()).unwrap();
    let clips: Vec<_> = synth_dataset(&[Recipe::Sweep, Recipe::NoiseBurst, Recipe::ClickTrain], 4, 1, &p)
        .unwrap()
        .into_iter()
        .map(|s| s.clip)
        .collect();
    let mut g = c.benchmark_group("mel_batch");
    g.sample_size(10);
    for (name, mode) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_mode(mode, || fe.mel_batch(&clips)))
        });
    }
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let p = DspParams::default();
    let fe = MelFrontEnd::new(p.clone()).unwrap();
    let clips: Vec<_> = synth_dataset(&[Recipe::Sweep, Recipe::NoiseBurst], 2, 1, &p)
        .unwrap()
        .into_iter()
        .map(|s| s.clip)
        .collect();
    let mels = fe.mel_batch(&clips);
    let refs: Vec<_> = mels.iter().collect();
    let cfg = VqVaeConfig {
        codeword_dim: 16,
        ..VqVaeConfig::default()
    };
    let model = VqVae::new(&cfg, 80, 344, 1).unwrap();
    let mut g = c.benchmark_group("vqvae_loss_and_gradient");
    g.sample_size(10);
    for (name, mode) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_mode(mode, || {
                    let mut t = Tape::new();
                    let bound = model.params().bind(&mut t);
                    let (loss, _) = model.loss_graph(&mut t, &bound, &refs).unwrap();
                    t.backward(loss.total).unwrap()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, conv, quantize, mels, training_step);
criterion_main!(benches);
