use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureKind, FrameMatrix, Waveform, FLOOR_DB};
use crate::error::{Error, Result};

/// 25 ms at 16 kHz.
pub const FRAME_LEN: usize = 400;
/// 10 ms at 16 kHz.
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const N_SPEC_BINS: usize = FFT_SIZE / 2 + 1;

/// Number of full frames in `n_samples`; zero when shorter than a frame.
pub fn frame_count(n_samples: usize) -> usize {
    if n_samples < FRAME_LEN {
        0
    } else {
        (n_samples - FRAME_LEN) / HOP + 1
    }
}

/// Symmetric Hann ("hanning") window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

pub(crate) fn to_db(magnitude: f64) -> f64 {
    (20.0 * magnitude.log10()).max(FLOOR_DB as f64)
}

struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Stft {
    fn new() -> Self {
        Self { fft: FftPlanner::new().plan_fft_forward(FFT_SIZE), window: hann(FRAME_LEN) }
    }

    fn frame_db(&self, frame: &[f32], buf: &mut [Complex<f64>], out: &mut [f32]) {
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < FRAME_LEN {
                Complex::new(frame[i] as f64 * self.window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        self.fft.process(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = to_db(c.norm()) as f32;
        }
    }
}

/// Magnitude spectrum in dB: 400-sample Hann frames every 160 samples,
/// zero-padded to 512, 257 one-sided bins, floored at −20 dB.
pub fn stft_magnitude_db(w: &Waveform) -> Result<FrameMatrix> {
    if w.sample_rate_hz != super::SAMPLE_RATE {
        return Err(Error::Data(format!("sample rate {} Hz, need 16000", w.sample_rate_hz)));
    }
    if w.samples.len() < FRAME_LEN {
        return Err(Error::Data(format!(
            "waveform of {} samples is shorter than one {FRAME_LEN}-sample frame",
            w.samples.len()
        )));
    }
    let n = frame_count(w.samples.len());
    let stft = Stft::new();
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut values = vec![0f32; n * N_SPEC_BINS];
    for (i, out) in values.chunks_mut(N_SPEC_BINS).enumerate() {
        stft.frame_db(&w.samples[i * HOP..i * HOP + FRAME_LEN], &mut buf, out);
    }
    FrameMatrix::new(values, n, FeatureKind::Spec)
}
