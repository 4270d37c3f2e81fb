use super::stft::Spectrogram;
use super::DspParams;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        mel * F_SP
    }
}

/// Area-normalized triangular filters, `bands x bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub bands: usize,
    pub bins: usize,
    pub weights: Vec<f32>,
    /// Half-open range of non-zero bins per band.
    spans: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn new(p: &DspParams) -> Self {
        let bins = p.linear_bins();
        let bands = p.mel_bands;
        let sr = p.sample_rate as f64;
        let fft_hz: Vec<f64> = (0..bins)
            .map(|i| i as f64 * sr / p.frame_size as f64)
            .collect();
        let (lo, hi) = (hz_to_mel(p.fmin as f64), hz_to_mel(p.fmax_hz() as f64));
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
            .collect();
        let mut weights = vec![0.0f32; bands * bins];
        let mut spans = Vec::with_capacity(bands);
        for m in 0..bands {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            let row = &mut weights[m * bins..(m + 1) * bins];
            for (k, &f) in fft_hz.iter().enumerate() {
                let up = (f - left) / (centre - left);
                let down = (right - f) / (right - centre);
                row[k] = (up.min(down).max(0.0) * norm) as f32;
            }
            let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = row.iter().rposition(|&w| w > 0.0).map_or(0, |i| i + 1);
            spans.push((first, last.max(first)));
        }
        Self {
            bands,
            bins,
            weights,
            spans,
        }
    }

    pub fn row(&self, band: usize) -> &[f32] {
        &self.weights[band * self.bins..(band + 1) * self.bins]
    }

    /// `ln(max(W · mag, floor))`.
    pub fn apply(&self, mag: &Spectrogram, p: &DspParams) -> MelSpec {
        assert_eq!(mag.bins, self.bins, "filterbank / spectrogram bin mismatch");
        let frames = mag.frames;
        let floor = p.floor;
        let mut values = vec![0.0f32; self.bands * frames];
        for m in 0..self.bands {
            let (a, b) = self.spans[m];
            let row = self.row(m);
            let out = &mut values[m * frames..(m + 1) * frames];
            for k in a..b {
                let w = row[k];
                let src = &mag.values[k * frames..(k + 1) * frames];
                for (o, &s) in out.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
            for o in out.iter_mut() {
                *o = o.max(floor).ln();
            }
        }
        MelSpec {
            bands: self.bands,
            frames,
            values,
            params: p.clone(),
        }
    }

    /// Moore-Penrose pseudo-inverse, `bins x bands` row-major.
    pub fn pseudo_inverse(&self) -> Vec<f32> {
        let m = nalgebra::DMatrix::<f64>::from_row_iterator(
            self.bands,
            self.bins,
            self.weights.iter().map(|&w| w as f64),
        );
        let pinv = m.pseudo_inverse(1e-10).expect("svd of the filterbank");
        let mut out = vec![0.0f32; self.bins * self.bands];
        for k in 0..self.bins {
            for b in 0..self.bands {
                out[k * self.bands + b] = pinv[(k, b)] as f32;
            }
        }
        out
    }
}

/// Log-compressed mel magnitudes, `bands x frames` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    pub bands: usize,
    pub frames: usize,
    pub values: Vec<f32>,
    pub params: DspParams,
}

impl MelSpec {
    pub fn at(&self, band: usize, frame: usize) -> f32 {
        self.values[band * self.frames + frame]
    }

    pub fn floor_value(&self) -> f32 {
        self.params.floor.ln()
    }

    /// `||self - other||_F / ||self||_F`.
    pub fn relative_error(&self, other: &MelSpec) -> f64 {
        let num: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum();
        let den: f64 = self.values.iter().map(|&a| (a as f64).powi(2)).sum();
        (num / den).sqrt()
    }

    pub fn mse(&self, other: &MelSpec) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum();
        s / self.values.len() as f64
    }
}
