use std::sync::Arc;

use realfft::num_complex::Complex32;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

/// Frames produced for `n` samples with symmetric reflection padding of
/// `(frame - hop) / 2` on each side.
pub fn frame_count(n: usize, frame: usize, hop: usize) -> usize {
    let padded = n + 2 * ((frame - hop) / 2);
    if padded < frame {
        return 0;
    }
    (padded - frame) / hop + 1
}

/// Linear-frequency magnitudes, `bins x frames` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub values: Vec<f32>,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f32 {
        self.values[bin * self.frames + frame]
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }
}

/// Short-time Fourier transform with a periodic Hann window.
pub struct Stft {
    frame: usize,
    hop: usize,
    window: Vec<f32>,
    forward: Arc<dyn RealToComplex<f32>>,
    inverse: Arc<dyn ComplexToReal<f32>>,
}

impl Stft {
    pub fn new(frame: usize, hop: usize) -> Self {
        let mut planner = RealFftPlanner::<f32>::new();
        let window = (0..frame)
            .map(|i| {
                let x = std::f64::consts::PI * i as f64 / frame as f64;
                (x.sin() * x.sin()) as f32
            })
            .collect();
        Self {
            frame,
            hop,
            window,
            forward: planner.plan_fft_forward(frame),
            inverse: planner.plan_fft_inverse(frame),
        }
    }

    pub fn frame_size(&self) -> usize {
        self.frame
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.frame / 2 + 1
    }

    pub fn padding(&self) -> usize {
        (self.frame - self.hop) / 2
    }

    pub fn window(&self) -> &[f32] {
        &self.window
    }

    fn padded(&self, samples: &[f32]) -> Vec<f32> {
        let p = self.padding() as isize;
        let n = samples.len() as isize;
        (0..samples.len() + 2 * p as usize)
            .map(|i| samples[reflect(i as isize - p, n)])
            .collect()
    }

    /// Complex spectrum per frame, `frames x bins` row-major.
    pub fn complex(&self, samples: &[f32]) -> Vec<Complex32> {
        let frames = frame_count(samples.len(), self.frame, self.hop);
        if frames == 0 || samples.is_empty() {
            return Vec::new();
        }
        let padded = self.padded(samples);
        let bins = self.bins();
        let mut out = vec![Complex32::new(0.0, 0.0); frames * bins];
        let mut buf = vec![0.0f32; self.frame];
        let mut scratch = self.forward.make_scratch_vec();
        for (t, spec) in out.chunks_mut(bins).enumerate() {
            let seg = &padded[t * self.hop..t * self.hop + self.frame];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = s * w;
            }
            self.forward
                .process_with_scratch(&mut buf, spec, &mut scratch)
                .expect("fft buffer sizes");
        }
        out
    }

    /// Magnitude spectrogram, `bins x frames`.
    pub fn magnitude(&self, samples: &[f32]) -> Spectrogram {
        let spec = self.complex(samples);
        let bins = self.bins();
        let frames = spec.len() / bins;
        let mut values = vec![0.0; bins * frames];
        for t in 0..frames {
            for b in 0..bins {
                values[b * frames + t] = spec[t * bins + b].norm();
            }
        }
        Spectrogram {
            bins,
            frames,
            values,
        }
    }

    /// Weighted overlap-add inverse of [`Stft::complex`], trimmed to `len`.
    pub fn inverse(&self, spec: &[Complex32], len: usize) -> Vec<f32> {
        let bins = self.bins();
        let frames = spec.len() / bins;
        let pad = self.padding();
        let total = (len + 2 * pad).max((frames.saturating_sub(1)) * self.hop + self.frame);
        let mut acc = vec![0.0f32; total];
        let mut norm = vec![0.0f32; total];
        let mut buf = vec![Complex32::new(0.0, 0.0); bins];
        let mut out = vec![0.0f32; self.frame];
        let mut scratch = self.inverse.make_scratch_vec();
        let scale = 1.0 / self.frame as f32;
        for t in 0..frames {
            buf.copy_from_slice(&spec[t * bins..(t + 1) * bins]);
            buf[0].im = 0.0;
            buf[bins - 1].im = 0.0;
            self.inverse
                .process_with_scratch(&mut buf, &mut out, &mut scratch)
                .expect("fft buffer sizes");
            let off = t * self.hop;
            for (i, (&v, &w)) in out.iter().zip(&self.window).enumerate() {
                acc[off + i] += v * scale * w;
                norm[off + i] += w * w;
            }
        }
        acc.iter()
            .zip(&norm)
            .skip(pad)
            .take(len)
            .map(|(&a, &n)| if n > 1e-8 { a / n } else { 0.0 })
            .collect()
    }
}

fn reflect(mut i: isize, n: isize) -> usize {
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}
