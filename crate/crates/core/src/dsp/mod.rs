//! Speech front end: 16 kHz waveforms to dB-scale Spec/FBank features, cut
//! into fixed-length labeled segments, plus a synthetic two-factor corpus
//! (speaker = harmonic spacing, phone = formant envelope).

mod align;
mod extract;
mod features;
mod manifest;
mod mel;
mod segment;
mod stft;
pub mod synth;
mod wav;

pub use align::{Alignment, Span, SILENCE_PHONES};
pub use extract::{extract_corpus, features_from_wav, ExtractConfig};
pub use features::{read_features, write_features, decode_features, encode_features};
pub use manifest::{CorpusManifest, ManifestRecord, SegmentIndex, SegmentRecord, Split};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelBank, N_MELS};
pub use segment::{label_segment, segment_frames, FeatureSegment};
pub use stft::{frame_count, stft_magnitude_db, FFT_SIZE, FRAME_LEN, HOP, N_SPEC_BINS};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// Every feature value is clipped from below at this dB level.
pub const FLOOR_DB: f32 = -20.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz != SAMPLE_RATE {
            return Err(Error::Data(format!("sample rate {sample_rate_hz} Hz, only 16000 Hz is supported")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::non_finite("waveform samples"));
        }
        Ok(Self { samples, sample_rate_hz })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Spec,
    #[serde(rename = "fbank")]
    FBank,
}

impl FeatureKind {
    pub fn bins(self) -> usize {
        match self {
            FeatureKind::Spec => N_SPEC_BINS,
            FeatureKind::FBank => N_MELS,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Spec => 0,
            FeatureKind::FBank => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FeatureKind::Spec),
            1 => Some(FeatureKind::FBank),
            _ => None,
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spec" => Ok(FeatureKind::Spec),
            "fbank" => Ok(FeatureKind::FBank),
            _ => Err(Error::InvalidArgument(format!("unknown feature kind {s:?} (spec|fbank)"))),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureKind::Spec => "spec",
            FeatureKind::FBank => "fbank",
        })
    }
}

/// `n_frames × n_bins` matrix of dB values, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix {
    pub values: Vec<f32>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub kind: FeatureKind,
    pub frame_shift_ms: f32,
    pub frame_length_ms: f32,
}

impl FrameMatrix {
    pub fn new(values: Vec<f32>, n_frames: usize, kind: FeatureKind) -> Result<Self> {
        let n_bins = kind.bins();
        if values.len() != n_frames * n_bins {
            return Err(Error::Shape(format!(
                "{} values for {n_frames} frames of {n_bins} bins",
                values.len()
            )));
        }
        Ok(Self { values, n_frames, n_bins, kind, frame_shift_ms: 10.0, frame_length_ms: 25.0 })
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_bins..(i + 1) * self.n_bins]
    }
}
