use rand::Rng as _;
use realfft::num_complex::Complex32;

use super::mel::{MelFilterbank, MelSpec};
use super::stft::Stft;
use super::AudioClip;
use crate::error::{Error, Result};

const PHASE_SEED: u64 = 0x6772_6966_6669_6e00;

#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    pub clip: AudioClip,
    /// `|| |STFT(x_i)| - S ||_F / ||S||_F` after each iteration.
    pub spectral_convergence: Vec<f64>,
}

/// Inverts a log-mel spectrogram: clipped pseudo-inverse of the filterbank
/// back to linear magnitudes, then alternating projections for the phase.
pub fn griffin_lim(mel: &MelSpec, iterations: usize) -> Result<GriffinLimOutput> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("griffin_lim needs at least one iteration".into()));
    }
    let p = &mel.params;
    let fb = MelFilterbank::new(p);
    if fb.bands != mel.bands {
        return Err(Error::dim(format!(
            "mel has {} bands, parameters describe {}",
            mel.bands, fb.bands
        )));
    }
    let stft = Stft::new(p.frame_size, p.hop);
    let target = linear_magnitudes(mel, &fb);
    let (bins, frames) = (fb.bins, mel.frames);
    let len = if frames == p.frames() {
        p.clip_samples()
    } else {
        frames.saturating_sub(1) * p.hop
    };
    let target_norm = target.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();

    // `target` is bins x frames; spectra are frames x bins.
    let mut r = crate::rng::rng(PHASE_SEED);
    let mut spec: Vec<Complex32> = (0..frames * bins)
        .map(|i| {
            let (t, b) = (i / bins, i % bins);
            let phase = r.random_range(0.0..std::f32::consts::TAU);
            Complex32::from_polar(target[b * frames + t], phase)
        })
        .collect();
    let mut errors = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let x = stft.inverse(&spec, len);
        let est = stft.complex(&x);
        let mut diff = 0.0f64;
        for t in 0..frames {
            for b in 0..bins {
                let e = est[t * bins + b];
                let s = target[b * frames + t];
                let mag = e.norm();
                diff += ((mag - s) as f64).powi(2);
                spec[t * bins + b] = if mag > 1e-12 {
                    e * (s / mag)
                } else {
                    Complex32::new(s, 0.0)
                };
            }
        }
        errors.push(if target_norm > 0.0 { diff.sqrt() / target_norm } else { 0.0 });
    }
    let samples: Vec<f32> = stft
        .inverse(&spec, len)
        .into_iter()
        .map(|v| v.clamp(-1.0, 1.0))
        .collect();
    Ok(GriffinLimOutput {
        clip: AudioClip::new(samples, p.sample_rate),
        spectral_convergence: errors,
    })
}

/// `max(0, W⁺ · exp(mel))`, `bins x frames`.
fn linear_magnitudes(mel: &MelSpec, fb: &MelFilterbank) -> Vec<f32> {
    let pinv = fb.pseudo_inverse();
    let frames = mel.frames;
    let mags: Vec<f32> = mel.values.iter().map(|v| v.exp()).collect();
    let mut out = vec![0.0f32; fb.bins * frames];
    crate::autodiff::kernels::gemm(fb.bins, fb.bands, frames, &pinv, false, &mags, false, &mut out, 0.0);
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}
