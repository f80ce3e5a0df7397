use std::path::Path;

use crate::error::{Error, Result};

/// Phone labels never used as segment labels.
pub const SILENCE_PHONES: &[&str] = &["sil", "h#", "pau", "epi"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub phone: String,
}

/// Frame-level phone alignment: `<start_frame> <end_frame_exclusive> <phone>`
/// per line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Alignment {
    pub spans: Vec<Span>,
}

impl Alignment {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut spans = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::format(path, format!("line {}: {msg}: {line:?}", ln + 1));
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [s, e, p] = parts[..] else {
                return Err(bad("expected `<start> <end> <phone>`"));
            };
            let start: usize = s.parse().map_err(|_| bad("bad start frame"))?;
            let end: usize = e.parse().map_err(|_| bad("bad end frame"))?;
            if end <= start {
                return Err(bad("empty or reversed span"));
            }
            if spans.last().is_some_and(|l: &Span| l.end > start) {
                return Err(bad("span overlaps the previous one"));
            }
            spans.push(Span { start, end, phone: p.to_string() });
        }
        Ok(Self { spans })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        self.spans.iter().map(|s| format!("{} {} {}\n", s.start, s.end, s.phone)).collect()
    }

    /// Label of every frame in `range`; `None` where no span covers it.
    pub fn frame_labels(&self, range: std::ops::Range<usize>) -> Vec<Option<&str>> {
        range
            .map(|f| {
                self.spans.iter().find(|s| s.start <= f && f < s.end).map(|s| s.phone.as_str())
            })
            .collect()
    }
}
