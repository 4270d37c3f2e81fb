mod common;

use dtfr_core::dsp::{
    canonicalize, decode_wav, encode_wav, frame_count, griffin_lim, AudioClip, DspParams, MelFrontEnd,
};
use proptest::prelude::*;

fn sines(freqs: &[(f32, f32)], p: &DspParams) -> AudioClip {
    let sr = p.sample_rate as f32;
    let samples = (0..p.clip_samples())
        .map(|i| {
            let t = i as f32 / sr;
            freqs
                .iter()
                .map(|&(f, a)| a * (std::f32::consts::TAU * f * t).sin())
                .sum()
        })
        .collect();
    AudioClip::new(samples, p.sample_rate)
}

#[test]
fn canonical_shapes() {
    let p = DspParams::default();
    let fe = MelFrontEnd::new(p.clone()).unwrap();
    let clip = sines(&[(440.0, 0.5)], &p);
    let mag = fe.stft_mag(&clip);
    assert_eq!((mag.bins, mag.frames), (513, 344));
    let mel = fe.mel_spectrogram(&clip);
    assert_eq!((mel.bands, mel.frames), (80, 344));
}

#[test]
fn silent_clip_sits_on_the_floor() {
    let p = DspParams::default();
    let fe = MelFrontEnd::new(p.clone()).unwrap();
    let clip = AudioClip::new(vec![0.0; p.clip_samples()], p.sample_rate);
    assert!(fe.stft_mag(&clip).values.iter().all(|&v| v == 0.0));
    let mel = fe.mel_spectrogram(&clip);
    let floor = 1e-5f32.ln();
    assert!((floor + 11.5129).abs() < 1e-4);
    assert!(mel.values.iter().all(|&v| v == floor));
}

#[test]
fn doubling_the_clip_adds_ln_2_to_unclipped_cells() {
    let p = DspParams::default();
    let fe = MelFrontEnd::new(p.clone()).unwrap();
    let clip = sines(&[(300.0, 0.2), (2500.0, 0.1)], &p);
    let louder = AudioClip::new(clip.samples.iter().map(|&v| 2.0 * v).collect(), p.sample_rate);
    let (a, b) = (fe.mel_spectrogram(&clip), fe.mel_spectrogram(&louder));
    let floor = a.floor_value();
    let mut unclipped = 0;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        if x > floor {
            unclipped += 1;
            assert!((y - x - std::f32::consts::LN_2).abs() < 1e-4, "{x} -> {y}");
        }
    }
    assert!(unclipped > a.values.len() / 2);
}

#[test]
fn griffin_lim_recovers_a_single_sine() {
    let p = DspParams::default();
    let fe = MelFrontEnd::new(p.clone()).unwrap();
    let mel = fe.mel_spectrogram(&sines(&[(440.0, 0.5)], &p));
    let out = griffin_lim(&mel, 100).unwrap();
    assert_eq!(out.clip.samples.len(), p.clip_samples());
    let err = mel.relative_error(&fe.mel_spectrogram(&out.clip));
    assert!(err < 0.15, "relative error {err}");
}

#[test]
fn griffin_lim_recovers_a_three_sine_mixture() {
    let p = DspParams::default();
    let fe = MelFrontEnd::new(p.clone()).unwrap();
    let mel = fe.mel_spectrogram(&sines(&[(220.0, 0.3), (1375.0, 0.2), (3520.0, 0.15)], &p));
    let out = griffin_lim(&mel, 100).unwrap();
    let err = mel.relative_error(&fe.mel_spectrogram(&out.clip));
    // The clipped pseudo-inverse alone leaves about 0.156 here.
    assert!(err < 0.2, "relative error {err}");
    let sc = &out.spectral_convergence;
    assert_eq!(sc.len(), 100);
    assert!(sc.last().unwrap() < sc.first().unwrap());
    // Non-increasing in expectation: block means decrease.
    let means: Vec<f64> = sc.chunks(25).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{means:?}");
}

#[test]
fn griffin_lim_rejects_zero_iterations() {
    let p = common::toy_dsp();
    let fe = MelFrontEnd::new(p.clone()).unwrap();
    let mel = fe.mel_spectrogram(&sines(&[(440.0, 0.5)], &p));
    assert!(griffin_lim(&mel, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_count_matches_the_padding_rule(n in 1024usize..200_000) {
        let expect = (n + 768 - 1024) / 256 + 1;
        prop_assert_eq!(frame_count(n, 1024, 256), expect);
    }

    #[test]
    fn wav_round_trip_is_within_one_step(v in prop::collection::vec(-1.0f32..1.0, 1..400)) {
        let clip = AudioClip::new(v.clone(), 16000);
        let back = decode_wav(&encode_wav(&clip)).unwrap();
        prop_assert_eq!(back.sample_rate, 16000);
        prop_assert_eq!(back.samples.len(), v.len());
        for (a, b) in v.iter().zip(&back.samples) {
            prop_assert!((a - b).abs() <= 1.0 / 32767.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn griffin_lim_output_is_finite_and_canonical(
        seed in 0u64..1000,
        gain in 0.0f32..4.0,
        iters in 1usize..6,
    ) {
        let p = common::toy_dsp();
        let fe = MelFrontEnd::new(p.clone()).unwrap();
        let mut r = dtfr_core::rng::rng(seed);
        use rand::Rng;
        let raw: Vec<f32> = (0..p.clip_samples() / 2).map(|_| gain * r.random_range(-1.0..1.0)).collect();
        let clip = canonicalize(&AudioClip::new(raw, p.sample_rate), &p).unwrap();
        let out = griffin_lim(&fe.mel_spectrogram(&clip), iters).unwrap();
        prop_assert_eq!(out.clip.samples.len(), p.clip_samples());
        prop_assert!(out.clip.samples.iter().all(|v| v.is_finite()));
    }
}
