use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_features, FeatureSegment, FrameMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

/// One utterance. Paths are relative to the manifest's directory unless
/// absolute. `audio` is set for raw corpora, `feats` once extracted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feats: Option<String>,
    pub align: String,
    pub speaker: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
}

impl ManifestRecord {
    /// Utterance id: file stem of the alignment path.
    pub fn utt_id(&self) -> String {
        Path::new(&self.align).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// JSON-lines list of utterances with speaker-disjoint splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn new(records: Vec<ManifestRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = Self { records, root: root.into() };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let records = read_jsonl(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(records, root).map_err(|e| match e {
            Error::Data(msg) => Error::format(path, msg),
            e => e,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.records)
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Speaker sets of train/dev/test must be pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        let mut owner: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.records {
            if let Some(prev) = owner.insert(&r.speaker, r.split) {
                if prev != r.split {
                    return Err(Error::Data(format!(
                        "speaker {} appears in both {prev} and {} splits",
                        r.speaker, r.split
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn speakers(&self, split: Split) -> BTreeSet<&str> {
        self.records.iter().filter(|r| r.split == split).map(|r| r.speaker.as_str()).collect()
    }
}

/// One extracted segment: where its frames live and its labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub feats: String,
    pub utt: String,
    pub start: usize,
    pub len: usize,
    pub speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phone: Option<String>,
    pub split: Split,
}

/// JSON-lines index of segments written by feature extraction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentIndex {
    pub records: Vec<SegmentRecord>,
    pub root: PathBuf,
}

impl SegmentIndex {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(Self { records: read_jsonl(path)?, root: path.parent().map(Path::to_path_buf).unwrap_or_default() })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.records)
    }

    /// Load the segments of `split` (all splits when `None`), in index order.
    pub fn load(&self, split: Option<Split>) -> Result<Vec<FeatureSegment>> {
        let mut cache: BTreeMap<&str, FrameMatrix> = BTreeMap::new();
        let mut out = Vec::new();
        for r in self.records.iter().filter(|r| split.is_none_or(|s| s == r.split)) {
            if !cache.contains_key(r.feats.as_str()) {
                let p = Path::new(&r.feats);
                let p = if p.is_absolute() { p.to_path_buf() } else { self.root.join(p) };
                cache.insert(&r.feats, read_features(&p)?);
            }
            let m = &cache[r.feats.as_str()];
            if r.start + r.len > m.n_frames {
                return Err(Error::Data(format!("segment {}@{} runs past the end of {}", r.utt, r.start, r.feats)));
            }
            let mut labels = BTreeMap::new();
            labels.insert("speaker".to_string(), r.speaker.clone());
            if let Some(p) = &r.phone {
                labels.insert("phone".to_string(), p.clone());
            }
            out.push(FeatureSegment {
                values: m.values[r.start * m.n_bins..(r.start + r.len) * m.n_bins].to_vec(),
                n_frames: r.len,
                n_bins: m.n_bins,
                kind: m.kind,
                labels,
                utt: r.utt.clone(),
                start: r.start,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(spk: &str, split: Split) -> ManifestRecord {
        ManifestRecord {
            feats: None,
            align: format!("align/{spk}_u0.ali"),
            speaker: spk.into(),
            split,
            audio: Some(format!("wav/{spk}_u0.wav")),
        }
    }

    #[test]
    fn speaker_disjointness_enforced() {
        assert!(CorpusManifest::new(vec![rec("a", Split::Train), rec("b", Split::Dev)], ".").is_ok());
        assert!(CorpusManifest::new(vec![rec("a", Split::Train), rec("a", Split::Dev)], ".").is_err());
    }

    #[test]
    fn record_json_shape() {
        let mut r = rec("a", Split::Test);
        r.feats = Some("feats/a_u0.lsf".into());
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            r#"{"feats":"feats/a_u0.lsf","align":"align/a_u0.ali","speaker":"a","split":"test","audio":"wav/a_u0.wav"}"#
        );
        assert_eq!(r.utt_id(), "a_u0");
    }
}
