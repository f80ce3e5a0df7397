use super::stft::to_db;
use super::{FeatureKind, FrameMatrix, FFT_SIZE, FLOOR_DB, N_SPEC_BINS, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const N_MELS: usize = 80;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the 257 linear bins, each row normalized to
/// unit sum so a flat power spectrum maps to the same level.
#[derive(Clone, Debug)]
pub struct MelBank {
    /// `N_MELS × N_SPEC_BINS`, row-major.
    pub weights: Vec<f64>,
    /// Lower edge, center and upper edge of each triangle, in Hz.
    pub edges: Vec<(f64, f64, f64)>,
}

impl MelBank {
    pub fn new() -> Self {
        let top = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
        let pts: Vec<f64> = (0..N_MELS + 2).map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64)).collect();
        let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
        let mut weights = vec![0.0; N_MELS * N_SPEC_BINS];
        let mut edges = Vec::with_capacity(N_MELS);
        for m in 0..N_MELS {
            let (lo, c, hi) = (pts[m], pts[m + 1], pts[m + 2]);
            edges.push((lo, c, hi));
            let row = &mut weights[m * N_SPEC_BINS..(m + 1) * N_SPEC_BINS];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                *w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w /= s);
        }
        Self { weights, edges }
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * N_SPEC_BINS..(m + 1) * N_SPEC_BINS]
    }

    /// Apply to one dB-magnitude frame, writing floored dB filter energies.
    pub fn apply_frame(&self, spec_db: &[f32], out: &mut [f32]) {
        let power: Vec<f64> = spec_db.iter().map(|&d| 10f64.powf(d as f64 / 10.0)).collect();
        for (m, o) in out.iter_mut().enumerate() {
            let e: f64 = self.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            // 10·log10(power) == 20·log10(sqrt(power)); share the flooring path.
            *o = (to_db(e.sqrt()) as f32).max(FLOOR_DB);
        }
    }
}

impl Default for MelBank {
    fn default() -> Self {
        Self::new()
    }
}

/// Convert a Spec matrix to 80 mel filterbank energies in dB.
pub fn mel_filterbank(spec: &FrameMatrix) -> Result<FrameMatrix> {
    if spec.kind != FeatureKind::Spec || spec.n_bins != N_SPEC_BINS {
        return Err(Error::Shape(format!(
            "mel filterbank needs {N_SPEC_BINS}-bin Spec input, got {} bins of {:?}",
            spec.n_bins, spec.kind
        )));
    }
    let bank = MelBank::new();
    let mut values = vec![0f32; spec.n_frames * N_MELS];
    for (i, out) in values.chunks_mut(N_MELS).enumerate() {
        bank.apply_frame(spec.frame(i), out);
    }
    FrameMatrix::new(values, spec.n_frames, FeatureKind::FBank)
}
