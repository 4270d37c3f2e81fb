//! Deterministic synthetic sound classes.

use std::f64::consts::TAU;

use rand::Rng as _;

use super::{AudioClip, DspParams};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng};

/// Built-in generators, one per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    /// Linear chirp between two frequencies drawn from [200, 4000] Hz.
    Sweep,
    /// White noise gated by a half-wave rectified sinusoid.
    NoiseBurst,
    /// Decaying tone clicks repeated at a fixed period (2-20 per second).
    ClickTrain,
}

impl Recipe {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sweep" => Ok(Recipe::Sweep),
            "noise_burst" => Ok(Recipe::NoiseBurst),
            "click_train" => Ok(Recipe::ClickTrain),
            other => Err(Error::Config(format!(
                "unknown recipe {other:?} (known: sweep, noise_burst, click_train)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Sweep => "sweep",
            Recipe::NoiseBurst => "noise_burst",
            Recipe::ClickTrain => "click_train",
        }
    }

    /// Renders one canonical-length clip from `seed`.
    pub fn render(self, seed: u64, p: &DspParams) -> SynthClip {
        let mut r = rng(seed);
        let n = p.clip_samples();
        let sr = p.sample_rate as f64;
        let mut samples = vec![0.0f32; n];
        let info = match self {
            Recipe::Sweep => {
                let f0 = r.random_range(200.0..4000.0);
                let f1 = r.random_range(200.0..4000.0);
                let amp = r.random_range(0.3..0.7);
                let dur = n as f64 / sr;
                let fade = (0.01 * sr) as usize;
                for (i, s) in samples.iter_mut().enumerate() {
                    let t = i as f64 / sr;
                    let phase = TAU * (f0 * t + (f1 - f0) * t * t / (2.0 * dur));
                    let edge = (i.min(n - 1 - i) as f64 / fade as f64).min(1.0);
                    *s = (amp * edge * phase.sin()) as f32;
                }
                SynthInfo::Sweep { f0, f1 }
            }
            Recipe::NoiseBurst => {
                let rate = r.random_range(1.0..6.0);
                let phase = r.random_range(0.0..TAU);
                let amp = r.random_range(0.2..0.5);
                for (i, s) in samples.iter_mut().enumerate() {
                    let env = (TAU * rate * i as f64 / sr + phase).sin().max(0.0);
                    let noise: f64 = r.random_range(-1.0..1.0);
                    *s = (amp * env * noise) as f32;
                }
                SynthInfo::NoiseBurst { rate }
            }
            Recipe::ClickTrain => {
                let rate: f64 = r.random_range(2.0..20.0);
                let period = (sr / rate).round() as usize;
                let offset = r.random_range(0..period);
                let tone = r.random_range(800.0..3000.0);
                let amp = r.random_range(0.5..0.9);
                let click: Vec<f32> = (0..256)
                    .map(|j| {
                        let j = j as f64;
                        (amp * (-j / 40.0).exp() * (TAU * tone * j / sr).sin()) as f32
                    })
                    .collect();
                let mut start = offset;
                while start < n {
                    for (s, &c) in samples[start..].iter_mut().zip(&click) {
                        *s += c;
                    }
                    start += period;
                }
                SynthInfo::ClickTrain { period }
            }
        };
        SynthClip {
            clip: AudioClip::new(samples, p.sample_rate),
            info,
        }
    }
}

/// Generating parameters of a synthetic clip, kept for verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthInfo {
    Sweep { f0: f64, f1: f64 },
    NoiseBurst { rate: f64 },
    ClickTrain { period: usize },
}

#[derive(Debug, Clone)]
pub struct SynthClip {
    pub clip: AudioClip,
    pub info: SynthInfo,
}

/// `count` clips per recipe, class-major order, label = recipe position.
pub fn synth_dataset(
    recipes: &[Recipe],
    count: usize,
    seed: u64,
    p: &DspParams,
) -> Result<Vec<SynthClip>> {
    if recipes.len() < 2 {
        return Err(Error::Config("a synthetic dataset needs at least two classes".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..recipes.len())
        .flat_map(|c| (0..count).map(move |i| (c, i)))
        .collect();
    Ok(crate::par::map(jobs.len(), |j| {
        let (c, i) = jobs[j];
        let mut s = recipes[c].render(derive_seed(seed, &[c as u64, i as u64]), p);
        s.clip.label = Some(c);
        s
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::MelFrontEnd;

    const ALL: [Recipe; 3] = [Recipe::Sweep, Recipe::NoiseBurst, Recipe::ClickTrain];

    #[test]
    fn dataset_is_balanced_and_deterministic() {
        let p = DspParams::default();
        let a = synth_dataset(&ALL, 10, 7, &p).unwrap();
        let b = synth_dataset(&ALL, 10, 7, &p).unwrap();
        assert_eq!(a.len(), 30);
        for c in 0..3 {
            assert_eq!(a.iter().filter(|s| s.clip.label == Some(c)).count(), 10);
        }
        assert!(a.iter().zip(&b).all(|(x, y)| x.clip == y.clip));
        assert!(a.iter().all(|s| s.clip.samples.len() == 88200));
        assert!(a.iter().all(|s| s.clip.samples.iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn one_class_is_rejected() {
        assert!(synth_dataset(&[Recipe::Sweep], 3, 0, &DspParams::default()).is_err());
        assert!(Recipe::from_name("siren").is_err());
    }

    #[test]
    fn sweep_energy_follows_a_monotone_trajectory() {
        let p = DspParams::default();
        let fe = MelFrontEnd::new(p.clone()).unwrap();
        for seed in 0..4 {
            let s = Recipe::Sweep.render(seed, &p);
            let SynthInfo::Sweep { f0, f1 } = s.info else { unreachable!() };
            let mel = fe.mel_spectrogram(&s.clip);
            // Skip the faded edges.
            let tracks: Vec<isize> = (2..mel.frames - 2)
                .map(|t| {
                    (0..mel.bands)
                        .max_by(|&a, &b| mel.at(a, t).total_cmp(&mel.at(b, t)))
                        .unwrap() as isize
                })
                .collect();
            let rising = f1 >= f0;
            for w in tracks.windows(2) {
                let step = if rising { w[1] - w[0] } else { w[0] - w[1] };
                assert!(step >= -2, "seed {seed}: {w:?} breaks the trajectory");
            }
            let run = (tracks[tracks.len() - 1] - tracks[0]).signum();
            if (f1 - f0).abs() > 300.0 {
                assert_eq!(run, if rising { 1 } else { -1 }, "seed {seed}");
            }
        }
    }

    #[test]
    fn click_train_autocorrelation_peaks_at_the_period() {
        let p = DspParams::default();
        for seed in 0..2 {
            let s = Recipe::ClickTrain.render(seed, &p);
            let SynthInfo::ClickTrain { period } = s.info else { unreachable!() };
            let x = &s.clip.samples;
            let lo = 22050 / 20 - 2;
            let hi = 22050 / 2 + 2;
            let corr = |lag: usize| -> f64 {
                (0..x.len() - lag).map(|i| (x[i] * x[i + lag]) as f64).sum()
            };
            let scores: Vec<(usize, f64)> = (lo..=hi).map(|l| (l, corr(l))).collect();
            let best = scores.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
            assert!(best.abs_diff(period) <= 1, "seed {seed}: {best} vs {period}");
        }
    }
}
