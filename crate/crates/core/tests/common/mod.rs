#![allow(dead_code)]

pub mod grad_suite;

use dtfr_core::dsp::{synth_dataset, DspParams, MelFrontEnd, MelSpec, Recipe};

/// Small front end giving 16 x 32 mels.
pub fn toy_dsp() -> DspParams {
    DspParams {
        sample_rate: 8000,
        clip_seconds: 0.256,
        frame_size: 256,
        hop: 64,
        mel_bands: 16,
        ..DspParams::default()
    }
}

pub fn toy_mels(per_class: usize, seed: u64) -> (Vec<MelSpec>, Vec<usize>) {
    let p = toy_dsp();
    let fe = MelFrontEnd::new(p.clone()).unwrap();
    let recipes = [Recipe::Sweep, Recipe::NoiseBurst, Recipe::ClickTrain];
    let clips = synth_dataset(&recipes, per_class, seed, &p).unwrap();
    let clips: Vec<_> = clips.into_iter().map(|s| s.clip).collect();
    let labels = clips.iter().map(|c| c.label.unwrap()).collect();
    (fe.mel_batch(&clips), labels)
}
