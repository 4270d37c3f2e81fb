use dtfr_core::index_grid::IndexGrid;
use dtfr_core::prior::{softmax, train_prior, ClassCondition, PriorConfig, PriorModel, Sampler};
use dtfr_core::rng;
use dtfr_core::Error;
use rand::Rng;

fn tiny_cfg(attention: bool) -> PriorConfig {
    PriorConfig {
        d_model: 8,
        layers: 3,
        attention,
        batch_size: 8,
        learning_rate: 3e-3,
        ..PriorConfig::default()
    }
}

fn random_grid(rows: usize, cols: usize, k: usize, seed: u64) -> IndexGrid {
    let mut r = rng::rng(seed);
    let v: Vec<u16> = (0..rows * cols).map(|_| r.random_range(0..k as u16)).collect();
    IndexGrid::new(rows, cols, v).unwrap()
}

/// Class `c` grids draw from `c * 100 .. c * 100 + 8`, with each row
/// repeating its first value half the time.
fn toy_set(per_class: usize, seed: u64) -> (Vec<IndexGrid>, Vec<usize>) {
    let mut r = rng::rng(seed);
    let mut grids = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2usize {
        for _ in 0..per_class {
            let mut v = Vec::with_capacity(24);
            for _ in 0..4 {
                let first = (c * 100) as u16 + r.random_range(0..8);
                for col in 0..6 {
                    let keep = col > 0 && r.random::<f32>() < 0.5;
                    v.push(if keep || col == 0 { first } else { (c * 100) as u16 + r.random_range(0..8) });
                }
            }
            grids.push(IndexGrid::new(4, 6, v).unwrap());
            labels.push(c);
        }
    }
    (grids, labels)
}

fn cond(c: usize, n: usize) -> ClassCondition {
    ClassCondition::new(c, n).unwrap()
}

#[test]
fn untrained_loss_is_near_uniform() {
    let cfg = PriorConfig {
        d_model: 32,
        ..PriorConfig::default()
    };
    let m = PriorModel::new(&cfg, 512, 3, 20, 86, 0).unwrap();
    assert_eq!(m.seq_len(), 1720);
    let grids: Vec<_> = (0..2).map(|s| random_grid(20, 86, 512, s)).collect();
    let refs: Vec<&IndexGrid> = grids.iter().collect();
    let loss = m.loss(&refs, &[cond(0, 3), cond(2, 3)]).unwrap();
    assert!((loss as f64 - 512f64.ln()).abs() < 0.2, "loss {loss}");
    assert!(loss >= 0.0);
}

#[test]
fn logits_are_causal_bit_for_bit() {
    for attention in [false, true] {
        let m = PriorModel::new(&tiny_cfg(attention), 32, 2, 5, 7, 1).unwrap();
        let mut r = rng::rng(3);
        for trial in 0..6 {
            let g = random_grid(5, 7, 32, trial);
            let j = r.random_range(0..35);
            let mut h = g.clone();
            h.set(j, ((g.flatten()[j] as usize + 1 + r.random_range(0..30)) % 32) as u16);
            let c = cond(trial as usize % 2, 2);
            let a = m.logits(&g, c).unwrap();
            let b = m.logits(&h, c).unwrap();
            let k = 32;
            assert_eq!(&a[..(j + 1) * k], &b[..(j + 1) * k], "attention {attention}, position {j}");
            if j + 1 < 35 {
                assert_ne!(&a[(j + 1) * k..], &b[(j + 1) * k..]);
            }
        }
    }
}

#[test]
fn class_count_mismatch_is_a_dimension_error() {
    let m = PriorModel::new(&tiny_cfg(false), 32, 2, 3, 4, 1).unwrap();
    let g = random_grid(3, 4, 32, 0);
    assert!(matches!(m.logits(&g, cond(1, 3)), Err(Error::Dimension(_))));
    assert!(matches!(m.sample(cond(0, 5), 1.0, 0), Err(Error::Dimension(_))));
    let wrong = random_grid(4, 4, 32, 0);
    assert!(matches!(m.logits(&wrong, cond(0, 2)), Err(Error::Dimension(_))));
}

#[test]
fn per_position_probabilities_sum_to_one() {
    let m = PriorModel::new(&tiny_cfg(true), 64, 2, 4, 5, 2).unwrap();
    let logits = m.logits(&random_grid(4, 5, 64, 1), cond(1, 2)).unwrap();
    for row in logits.chunks(64) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let e: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: f32 = e.iter().sum();
        let s: f32 = e.iter().map(|v| v / z).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}

#[test]
fn incremental_scoring_matches_the_full_forward() {
    for attention in [false, true] {
        let m = PriorModel::new(&tiny_cfg(attention), 32, 3, 4, 6, 5).unwrap();
        let g = random_grid(4, 6, 32, 9);
        let c = cond(2, 3);
        let full = m.logits(&g, c).unwrap();
        let mut s = Sampler::new(&m, c).unwrap();
        for (i, &y) in g.flatten().iter().enumerate() {
            let inc = s.next_logits();
            for (a, b) in inc.iter().zip(&full[i * 32..(i + 1) * 32]) {
                assert!((a - b).abs() < 1e-4, "position {i}: {a} vs {b}");
            }
            s.push(y as usize);
        }
    }
}

#[test]
fn sequence_log_likelihood_factorizes() {
    let m = PriorModel::new(&tiny_cfg(true), 64, 2, 4, 6, 8).unwrap();
    let g = random_grid(4, 6, 64, 4);
    let c = cond(0, 2);
    let ll = m.log_likelihood(&g, c).unwrap();
    let loss = m.loss(&[&g], &[c]).unwrap() as f64;
    let n = 24.0;
    assert!((ll + n * loss).abs() < 1e-4 * n, "{ll} vs {}", -n * loss);
}

#[test]
fn sampling_is_deterministic() {
    let m = PriorModel::new(&tiny_cfg(true), 32, 2, 3, 5, 4).unwrap();
    let c = cond(1, 2);
    let a = m.sample(c, 0.0, 1).unwrap();
    assert_eq!(a, m.sample(c, 0.0, 999).unwrap());
    let b = m.sample(c, 1.0, 7).unwrap();
    assert_eq!(b, m.sample(c, 1.0, 7).unwrap());
    assert_eq!((b.rows(), b.cols()), (3, 5));
    let many = m.sample_many(c, 1.0, 3, 4).unwrap();
    assert_eq!(many, m.sample_many(c, 1.0, 3, 4).unwrap());
    assert!(many.iter().any(|g| g != &many[0]));
}

#[test]
fn first_position_frequency_matches_its_softmax() {
    let k = 512;
    let mut m = PriorModel::new(&tiny_cfg(false), k, 2, 2, 3, 0).unwrap();
    let hw = m.head_weight_id();
    m.params_mut().get_mut(hw).data_mut().fill(0.0);
    let hb = m.head_bias_id();
    let bias = m.params_mut().get_mut(hb).data_mut();
    bias.fill(0.0);
    let b7 = (0.9f64 * (k as f64 - 1.0) / 0.1).ln();
    bias[7] = b7 as f32;
    let c = cond(0, 2);
    let p = softmax(&m.logits(&IndexGrid::filled(2, 3, 0), c).unwrap()[..k], 1.0);
    assert!((p[7] - 0.9).abs() < 1e-5);
    let grids = m.sample_many(c, 1.0, 42, 1000).unwrap();
    let hits = grids.iter().filter(|g| g.flatten()[0] == 7).count();
    let freq = hits as f64 / 1000.0;
    assert!((freq - 0.9).abs() < 0.03, "frequency {freq}");
}

#[test]
fn training_progress_conditioning_and_label_control() {
    let (train, train_y) = toy_set(24, 1);
    let (held, held_y) = toy_set(6, 2);
    let held_refs: Vec<&IndexGrid> = held.iter().collect();
    let true_c: Vec<_> = held_y.iter().map(|&c| cond(c, 2)).collect();
    let swapped: Vec<_> = held_y.iter().map(|&c| cond(1 - c, 2)).collect();
    let cfg = PriorConfig {
        d_model: 16,
        layers: 3,
        ..tiny_cfg(true)
    };
    for seed in 0..3 {
        let t = train_prior(&train, &train_y, 2, 512, &cfg, 500, seed, |_| {}).unwrap();
        let first = t.curve[0].loss;
        let last = t.curve.last().unwrap().loss;
        assert!(last < first, "seed {seed}: {first} -> {last}");
        let held_loss = t.model.loss(&held_refs, &true_c).unwrap();
        assert!((held_loss as f64) < 512f64.ln(), "held-out {held_loss}");
        let control = t.model.loss(&held_refs, &swapped).unwrap();
        assert!(control > held_loss, "seed {seed}: swapped {control} <= true {held_loss}");
        let blank = IndexGrid::filled(4, 6, 0);
        let l0 = t.model.logits(&blank, cond(0, 2)).unwrap();
        let l1 = t.model.logits(&blank, cond(1, 2)).unwrap();
        assert_ne!(&l0[..512], &l1[..512]);
    }
}

#[test]
fn zero_steps_determinism_and_corruption() {
    let (train, y) = toy_set(3, 5);
    let cfg = tiny_cfg(true);
    let t0 = train_prior(&train, &y, 2, 512, &cfg, 0, 9, |_| {}).unwrap();
    let fresh = PriorModel::new(&cfg, 512, 2, 4, 6, rng::derive_seed(9, &[0])).unwrap();
    assert_eq!(t0.model.params(), fresh.params());
    let a = train_prior(&train, &y, 2, 512, &cfg, 4, 9, |_| {}).unwrap();
    let b = train_prior(&train, &y, 2, 512, &cfg, 4, 9, |_| {}).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.curve, b.curve);
    let mut bad = train.clone();
    bad[1].set(3, 600);
    assert!(matches!(
        train_prior(&bad, &y, 2, 512, &cfg, 1, 0, |_| {}),
        Err(Error::Corruption(_))
    ));
}
