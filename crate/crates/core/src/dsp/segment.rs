use std::collections::BTreeMap;

use super::{Alignment, FeatureKind, FrameMatrix, SILENCE_PHONES};
use crate::error::{Error, Result};

/// Fixed-length window of a feature matrix with attribute labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSegment {
    /// `n_frames × n_bins`, row-major dB values.
    pub values: Vec<f32>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub kind: FeatureKind,
    /// attribute name → value, e.g. `speaker → spk03`, `phone → aa`.
    pub labels: BTreeMap<String, String>,
    pub utt: String,
    pub start: usize,
}

impl FeatureSegment {
    pub fn label(&self, attribute: &str) -> Option<&str> {
        self.labels.get(attribute).map(String::as_str)
    }
}

/// All windows `[i·hop, i·hop + seg_len)` that fit; a trailing partial
/// window is dropped.
pub fn segment_frames(frames: &FrameMatrix, utt: &str, seg_len: usize, hop: usize) -> Result<Vec<FeatureSegment>> {
    if hop == 0 || seg_len == 0 {
        return Err(Error::InvalidArgument("segment length and hop must be at least 1".into()));
    }
    let f = frames.n_bins;
    let mut out = Vec::new();
    let mut start = 0;
    while start + seg_len <= frames.n_frames {
        out.push(FeatureSegment {
            values: frames.values[start * f..(start + seg_len) * f].to_vec(),
            n_frames: seg_len,
            n_bins: f,
            kind: frames.kind,
            labels: BTreeMap::new(),
            utt: utt.to_string(),
            start,
        });
        start += hop;
    }
    Ok(out)
}

/// Attach the speaker label, and a phone label when one non-silence phone
/// covers a strict majority of the segment's frames.
pub fn label_segment(mut seg: FeatureSegment, alignment: &Alignment, speaker: &str) -> FeatureSegment {
    seg.labels.insert("speaker".into(), speaker.into());
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in alignment.frame_labels(seg.start..seg.start + seg.n_frames).into_iter().flatten() {
        if !SILENCE_PHONES.contains(&p) {
            *counts.entry(p).or_default() += 1;
        }
    }
    if let Some((p, _)) = counts.into_iter().find(|&(_, c)| 2 * c > seg.n_frames) {
        seg.labels.insert("phone".into(), p.to_string());
    }
    seg
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn frames(n: usize) -> FrameMatrix {
        let v: Vec<f32> = (0..n * 80).map(|i| i as f32).collect();
        FrameMatrix::new(v, n, FeatureKind::FBank).unwrap()
    }

    fn seg20() -> FeatureSegment {
        segment_frames(&frames(20), "u", 20, 20).unwrap().remove(0)
    }

    #[test]
    fn tiling_counts() {
        assert_eq!(segment_frames(&frames(100), "u", 20, 20).unwrap().len(), 5);
        assert_eq!(segment_frames(&frames(100), "u", 100, 1).unwrap().len(), 1);
        let s = segment_frames(&frames(45), "u", 20, 10).unwrap();
        assert_eq!(s.iter().map(|s| s.start).collect::<Vec<_>>(), vec![0, 10, 20]);
        assert!(segment_frames(&frames(10), "u", 20, 20).unwrap().is_empty());
        assert!(segment_frames(&frames(10), "u", 20, 0).is_err());
    }

    #[test]
    fn segments_are_verbatim_submatrices() {
        let fm = frames(45);
        for s in segment_frames(&fm, "u", 20, 10).unwrap() {
            assert_eq!(s.values, fm.values[s.start * 80..(s.start + 20) * 80]);
        }
    }

    fn ali(text: &str) -> Alignment {
        Alignment::parse(text, Path::new("t")).unwrap()
    }

    #[test]
    fn majority_labels() {
        let s = label_segment(seg20(), &ali("0 20 ae\n"), "spk1");
        assert_eq!(s.label("phone"), Some("ae"));
        assert_eq!(s.label("speaker"), Some("spk1"));
        let s = label_segment(seg20(), &ali("0 12 ae\n12 20 n\n"), "spk1");
        assert_eq!(s.label("phone"), Some("ae"));
        let s = label_segment(seg20(), &ali("0 10 ae\n10 20 n\n"), "spk1");
        assert_eq!(s.label("phone"), None);
    }

    #[test]
    fn silence_never_labels() {
        let s = label_segment(seg20(), &ali("0 20 sil\n"), "spk1");
        assert_eq!(s.label("phone"), None);
    }
}
