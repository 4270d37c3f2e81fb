//! Audio front end: WAV I/O, canonical clip length, STFT, log-mel
//! spectrograms, Griffin-Lim inversion and a synthetic labelled corpus.

mod griffin_lim;
mod mel;
mod stft;
mod synth;
mod wav;

pub use griffin_lim::{griffin_lim, GriffinLimOutput};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank, MelSpec};
pub use stft::{frame_count, Spectrogram, Stft};
pub use synth::{synth_dataset, Recipe};
pub use wav::{decode_wav, encode_wav, load_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Front-end parameters. Defaults give 80 x 344 log-mels for 4 s at 22050 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspParams {
    pub sample_rate: u32,
    pub clip_seconds: f32,
    pub frame_size: usize,
    pub hop: usize,
    pub mel_bands: usize,
    pub floor: f32,
    pub fmin: f32,
    /// Upper mel edge in Hz; `None` means Nyquist.
    pub fmax: Option<f32>,
}

impl Default for DspParams {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            clip_seconds: 4.0,
            frame_size: 1024,
            hop: 256,
            mel_bands: 80,
            floor: 1e-5,
            fmin: 0.0,
            fmax: None,
        }
    }
}

impl DspParams {
    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds as f64 * self.sample_rate as f64).round() as usize
    }

    pub fn linear_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Symmetric reflection padding applied before framing.
    pub fn padding(&self) -> usize {
        (self.frame_size - self.hop) / 2
    }

    pub fn frames(&self) -> usize {
        frame_count(self.clip_samples(), self.frame_size, self.hop)
    }

    pub fn fmax_hz(&self) -> f32 {
        self.fmax.unwrap_or(self.sample_rate as f32 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.clip_seconds <= 0.0 {
            return Err(Error::Config("sample_rate and clip_seconds must be positive".into()));
        }
        if !self.frame_size.is_power_of_two() || self.hop == 0 || self.hop > self.frame_size {
            return Err(Error::Config(
                "frame_size must be a power of two and 0 < hop <= frame_size".into(),
            ));
        }
        if self.mel_bands == 0 || !(self.floor > 0.0) {
            return Err(Error::Config("mel_bands and floor must be positive".into()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax_hz()) {
            return Err(Error::Config("need 0 <= fmin < fmax".into()));
        }
        Ok(())
    }
}

/// Mono audio with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: Option<usize>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            label: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn duration(&self) -> f32 {
        self.samples.len() as f32 / self.sample_rate as f32
    }

    pub fn rms(&self) -> f32 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let s: f64 = self.samples.iter().map(|&x| (x as f64).powi(2)).sum();
        (s / self.samples.len() as f64).sqrt() as f32
    }
}

/// Linear-interpolation resampling.
pub fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as f64) * to as f64 / from as f64).round() as usize;
    let ratio = from as f64 / to as f64;
    let last = samples.len() - 1;
    (0..out_len)
        .map(|i| {
            let t = i as f64 * ratio;
            let j = (t.floor() as usize).min(last);
            let frac = (t - j as f64) as f32;
            let next = samples[(j + 1).min(last)];
            samples[j] + (next - samples[j]) * frac
        })
        .collect()
}

/// Resamples to `params.sample_rate`, then zero-pads or truncates to the
/// canonical clip length.
pub fn canonicalize(clip: &AudioClip, params: &DspParams) -> Result<AudioClip> {
    if clip.samples.is_empty() {
        return Err(Error::InvalidArgument("cannot canonicalize an empty clip".into()));
    }
    let mut samples = resample_linear(&clip.samples, clip.sample_rate, params.sample_rate);
    samples.resize(params.clip_samples(), 0.0);
    Ok(AudioClip {
        samples,
        sample_rate: params.sample_rate,
        label: clip.label,
    })
}

/// Log-mel spectrogram of a clip at the front end's canonical settings.
pub struct MelFrontEnd {
    params: DspParams,
    stft: Stft,
    filterbank: MelFilterbank,
}

impl MelFrontEnd {
    pub fn new(params: DspParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            stft: Stft::new(params.frame_size, params.hop),
            filterbank: MelFilterbank::new(&params),
            params,
        })
    }

    pub fn params(&self) -> &DspParams {
        &self.params
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn stft_mag(&self, clip: &AudioClip) -> Spectrogram {
        self.stft.magnitude(&clip.samples)
    }

    pub fn mel_spectrogram(&self, clip: &AudioClip) -> MelSpec {
        let mag = self.stft_mag(clip);
        self.filterbank.apply(&mag, &self.params)
    }

    /// Mels for many clips, fanned out across workers.
    pub fn mel_batch(&self, clips: &[AudioClip]) -> Vec<MelSpec> {
        crate::par::map(clips.len(), |i| self.mel_spectrogram(&clips[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(secs: f32) -> AudioClip {
        let n = (secs * 22050.0) as usize;
        AudioClip::new((0..n).map(|i| ((i % 100) as f32 / 100.0) - 0.5).collect(), 22050)
    }

    #[test]
    fn short_clip_is_zero_padded() {
        let p = DspParams::default();
        let c = canonicalize(&clip(2.0), &p).unwrap();
        assert_eq!(c.samples.len(), 88200);
        assert!(c.samples[44100..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn long_clip_is_truncated() {
        let p = DspParams::default();
        let src = clip(5.0);
        let c = canonicalize(&src, &p).unwrap();
        assert_eq!(c.samples[..], src.samples[..88200]);
    }

    #[test]
    fn canonical_clip_is_unchanged() {
        let p = DspParams::default();
        let src = clip(4.0).with_label(2);
        assert_eq!(canonicalize(&src, &p).unwrap(), src);
    }

    #[test]
    fn empty_clip_is_rejected() {
        let p = DspParams::default();
        assert!(canonicalize(&AudioClip::new(vec![], 22050), &p).is_err());
    }

    #[test]
    fn resampling_changes_length_proportionally() {
        let src = AudioClip::new(vec![0.25; 44100], 44100);
        let c = canonicalize(&src, &DspParams::default()).unwrap();
        assert!(c.samples[..22050].iter().all(|&x| (x - 0.25).abs() < 1e-7));
        assert!(c.samples[22050..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn canonical_frame_count() {
        assert_eq!(DspParams::default().frames(), 344);
        assert_eq!(DspParams::default().padding(), 384);
    }
}
