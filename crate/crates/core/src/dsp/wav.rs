use std::path::Path;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Read a RIFF WAV file. Only PCM16 mono 16 kHz is accepted.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
        || spec.sample_rate != SAMPLE_RATE
    {
        return Err(Error::format(
            path,
            format!(
                "need PCM16 mono 16000 Hz, got {} ch / {} bit {:?} / {} Hz",
                spec.channels, spec.bits_per_sample, spec.sample_format, spec.sample_rate
            ),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Waveform::new(samples, SAMPLE_RATE)
}

/// Write PCM16 mono; samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut wr = hound::WavWriter::create(path, spec).map_err(|e| Error::format(path, e.to_string()))?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        wr.write_sample(v).map_err(|e| Error::format(path, e.to_string()))?;
    }
    wr.finalize().map_err(|e| Error::format(path, e.to_string()))
}
