use crate::dsp::FeatureSegment;
use crate::error::{Error, Result};

/// Standard deviations below this (in dB) are clamped, so bins that sit on
/// the −20 dB floor do not blow up after normalization.
pub const MIN_STD_DB: f32 = 1.0;

/// Per-frequency-bin z-scoring with statistics from the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalizer {
    pub fn identity(n_bins: usize) -> Self {
        Self { mean: vec![0.0; n_bins], std: vec![1.0; n_bins] }
    }

    pub fn fit(segments: &[FeatureSegment]) -> Result<Self> {
        let first = segments.first().ok_or_else(|| Error::Data("cannot fit normalizer on no segments".into()))?;
        let f = first.n_bins;
        let mut sum = vec![0f64; f];
        let mut sq = vec![0f64; f];
        let mut n = 0usize;
        for s in segments {
            if s.n_bins != f {
                return Err(Error::Shape(format!("segments with {} and {f} bins", s.n_bins)));
            }
            for row in s.values.chunks(f) {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += v as f64;
                    sq[k] += (v as f64).powi(2);
                }
                n += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n as f64 - m * m).max(0.0).sqrt() as f32).max(MIN_STD_DB))
            .collect();
        Ok(Self { mean: mean.into_iter().map(|m| m as f32).collect(), std })
    }

    pub fn n_bins(&self) -> usize {
        self.mean.len()
    }

    /// dB → model space, for one `T×F` segment.
    pub fn apply(&self, values: &[f32]) -> Vec<f32> {
        let f = self.n_bins();
        values.iter().enumerate().map(|(i, &v)| (v - self.mean[i % f]) / self.std[i % f]).collect()
    }

    /// Model space → dB.
    pub fn invert(&self, values: &[f32]) -> Vec<f32> {
        let f = self.n_bins();
        values.iter().enumerate().map(|(i, &v)| v * self.std[i % f] + self.mean[i % f]).collect()
    }
}
