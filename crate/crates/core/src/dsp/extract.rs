use std::path::Path;

use super::{
    label_segment, mel_filterbank, read_features, read_wav, segment_frames, stft_magnitude_db, write_features,
    Alignment, CorpusManifest, FeatureKind, FrameMatrix, SegmentIndex, SegmentRecord,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExtractConfig {
    pub feature_kind: FeatureKind,
    pub seg_len: usize,
    /// Frames between consecutive segment starts.
    pub hop: usize,
}

/// Features of a waveform file.
pub fn features_from_wav(path: &Path, kind: FeatureKind) -> Result<FrameMatrix> {
    let spec = stft_magnitude_db(&read_wav(path)?)?;
    match kind {
        FeatureKind::Spec => Ok(spec),
        FeatureKind::FBank => mel_filterbank(&spec),
    }
}

/// Compute features for every utterance (from audio when present, otherwise
/// from its existing feature file), cut labeled segments, and write
/// `feats/<utt>.lsf` plus `segments.jsonl` under `out_dir`. Everything is
/// computed before anything is written, so a failure leaves no partial output.
pub fn extract_corpus(manifest: &CorpusManifest, cfg: &ExtractConfig, out_dir: &Path) -> Result<SegmentIndex> {
    if manifest.records.is_empty() {
        return Err(Error::Data("manifest has no utterances".into()));
    }
    if cfg.seg_len == 0 || cfg.hop == 0 {
        return Err(Error::InvalidArgument("segment length and hop must be at least 1".into()));
    }
    let mut records: Vec<_> = manifest.records.iter().collect();
    records.sort_by_key(|r| r.utt_id());
    let mut outputs = Vec::with_capacity(records.len());
    let mut index = Vec::new();
    for r in records {
        let utt = r.utt_id();
        let frames = match (&r.audio, &r.feats) {
            (Some(a), _) => features_from_wav(&manifest.resolve(a), cfg.feature_kind)?,
            (None, Some(f)) => {
                let m = read_features(&manifest.resolve(f))?;
                if m.kind != cfg.feature_kind {
                    return Err(Error::Data(format!("{f} holds {} features, {} requested", m.kind, cfg.feature_kind)));
                }
                m
            }
            (None, None) => return Err(Error::Data(format!("utterance {utt} has neither audio nor features"))),
        };
        let alignment = Alignment::read(&manifest.resolve(&r.align))?;
        let feats = format!("feats/{utt}.lsf");
        for seg in segment_frames(&frames, &utt, cfg.seg_len, cfg.hop)? {
            let seg = label_segment(seg, &alignment, &r.speaker);
            index.push(SegmentRecord {
                feats: feats.clone(),
                utt: utt.clone(),
                start: seg.start,
                len: seg.n_frames,
                speaker: r.speaker.clone(),
                phone: seg.label("phone").map(String::from),
                split: r.split,
            });
        }
        outputs.push((feats, frames));
    }
    let feat_dir = out_dir.join("feats");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    for (rel, frames) in &outputs {
        write_features(&out_dir.join(rel), frames)?;
    }
    let index = SegmentIndex { records: index, root: out_dir.to_path_buf() };
    index.write(&out_dir.join("segments.jsonl"))?;
    Ok(index)
}
