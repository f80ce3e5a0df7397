//! Desk-scale labeled corpus.
//!
//! Each speaker is a fundamental frequency (harmonic comb spacing) and each
//! phone a two-formant spectral envelope, so in the log-spectral domain a
//! frame is approximately `comb(speaker) + envelope(phone)`.

use std::path::Path;

use super::{write_wav, Alignment, CorpusManifest, ManifestRecord, Span, Split, Waveform, FRAME_LEN, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::Rng;

const SILENCE_FRAMES: usize = 10;
const NOISE_STD: f64 = 1e-3;
const MAX_HARMONIC_HZ: f64 = 7800.0;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub n_phones: usize,
    pub utts_per_speaker: usize,
    pub seed: u64,
    pub phones_per_utt: usize,
    pub min_phone_frames: usize,
    pub max_phone_frames: usize,
}

impl SynthConfig {
    pub fn new(n_speakers: usize, n_phones: usize, utts_per_speaker: usize, seed: u64) -> Self {
        Self {
            n_speakers,
            n_phones,
            utts_per_speaker,
            seed,
            phones_per_utt: 12,
            min_phone_frames: 20,
            max_phone_frames: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Voice {
    pub name: String,
    pub f0: f64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhoneShape {
    pub name: String,
    pub formants: [f64; 2],
}

impl PhoneShape {
    /// Linear amplitude of a harmonic at `hz`.
    pub fn amplitude(&self, hz: f64) -> f64 {
        let g = |c: f64, bw: f64| (-0.5 * ((hz - c) / bw).powi(2)).exp();
        0.25 * (0.5 * g(self.formants[0], 120.0) + 0.35 * g(self.formants[1], 180.0) + 0.03 * (-hz / 2500.0).exp())
    }
}

#[derive(Clone, Debug)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: usize,
    pub alignment: Alignment,
    pub waveform: Waveform,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub voices: Vec<Voice>,
    pub phones: Vec<PhoneShape>,
    pub utterances: Vec<SynthUtterance>,
}

const PHONE_NAMES: &[&str] = &["aa", "ae", "iy", "uw", "eh", "ih", "ow", "er", "ah", "ao", "ey", "ay", "oy", "uh"];

fn split_for(i: usize, n: usize) -> Split {
    match (n, i) {
        (2, 1) | (3, 1) => Split::Dev,
        (3, 2) => Split::Test,
        (n, 1) if n >= 4 => Split::Dev,
        (n, i) if n >= 4 && i == n - 2 => Split::Test,
        _ => Split::Train,
    }
}

/// Speakers and phones for a configuration.
pub fn inventory(cfg: &SynthConfig) -> (Vec<Voice>, Vec<PhoneShape>) {
    let mut rng = Rng::for_purpose(cfg.seed, "synth/inventory");
    let voices = (0..cfg.n_speakers)
        .map(|i| {
            let t = i as f64 / (cfg.n_speakers - 1).max(1) as f64;
            Voice {
                name: format!("spk{i:02}"),
                f0: 90.0 * (280.0f64 / 90.0).powf(t) * (1.0 + 0.04 * (rng.uniform() - 0.5)),
                split: split_for(i, cfg.n_speakers),
            }
        })
        .collect();
    let phones = (0..cfg.n_phones)
        .map(|k| {
            let name = PHONE_NAMES.get(k).map(|s| s.to_string()).unwrap_or_else(|| format!("p{k}"));
            let f1 = 300.0 + 500.0 * ((k as f64 * 0.618_034) % 1.0) + 40.0 * (rng.uniform() - 0.5);
            let f2 = 1000.0 + 1500.0 * k as f64 / (cfg.n_phones - 1).max(1) as f64 + 40.0 * (rng.uniform() - 0.5);
            PhoneShape { name, formants: [f1, f2] }
        })
        .collect();
    (voices, phones)
}

/// Render a phone sequence for one voice. `frames[i]` is the phone index
/// sounding during hop `i` (`None` = silence). Returns exactly enough
/// samples for `frames.len()` analysis frames.
pub fn render(f0: f64, phones: &[PhoneShape], frames: &[Option<usize>], rng: &mut Rng) -> Vec<f64> {
    let n_samples = frames.len() * HOP + (FRAME_LEN - HOP);
    let n_harm = (MAX_HARMONIC_HZ / f0).floor() as usize;
    let mut phasors: Vec<(f64, f64)> = (0..n_harm)
        .map(|_| {
            let ph = 2.0 * std::f64::consts::PI * rng.uniform();
            (ph.cos(), ph.sin())
        })
        .collect();
    let rot: Vec<(f64, f64)> = (1..=n_harm)
        .map(|h| {
            let w = 2.0 * std::f64::consts::PI * h as f64 * f0 / SAMPLE_RATE as f64;
            (w.cos(), w.sin())
        })
        .collect();
    let target = |blk: usize| -> Vec<f64> {
        let idx = frames.get(blk.min(frames.len() - 1)).copied().flatten();
        (1..=n_harm)
            .map(|h| idx.map_or(0.0, |p| phones[p].amplitude(h as f64 * f0)))
            .collect()
    };
    let mut out = Vec::with_capacity(n_samples);
    let mut prev = target(0);
    let mut blk = 0;
    while out.len() < n_samples {
        let cur = target(blk);
        for s in 0..HOP {
            if out.len() == n_samples {
                break;
            }
            let a = s as f64 / HOP as f64;
            let mut v = NOISE_STD * rng.normal();
            for h in 0..n_harm {
                let amp = prev[h] + (cur[h] - prev[h]) * a;
                let (c, si) = phasors[h];
                v += amp * si;
                let (rc, rs) = rot[h];
                phasors[h] = (c * rc - si * rs, c * rs + si * rc);
            }
            out.push(v);
        }
        // Renormalize against drift of the rotation recurrence.
        for p in &mut phasors {
            let n = (p.0 * p.0 + p.1 * p.1).sqrt();
            *p = (p.0 / n, p.1 / n);
        }
        prev = cur;
        blk += 1;
    }
    out
}

fn utterance(cfg: &SynthConfig, voices: &[Voice], phones: &[PhoneShape], spk: usize, u: usize) -> Result<SynthUtterance> {
    let id = format!("{}_u{u:03}", voices[spk].name);
    let mut rng = Rng::for_purpose(cfg.seed, &format!("synth/{id}"));
    let mut spans = vec![Span { start: 0, end: SILENCE_FRAMES, phone: "sil".into() }];
    let mut frames: Vec<Option<usize>> = vec![None; SILENCE_FRAMES];
    let mut last = None;
    for _ in 0..cfg.phones_per_utt {
        let mut p = rng.below(phones.len());
        while Some(p) == last {
            p = rng.below(phones.len());
        }
        last = Some(p);
        let dur = cfg.min_phone_frames + rng.below(cfg.max_phone_frames - cfg.min_phone_frames + 1);
        let start = frames.len();
        frames.extend(std::iter::repeat_n(Some(p), dur));
        spans.push(Span { start, end: frames.len(), phone: phones[p].name.clone() });
    }
    let start = frames.len();
    frames.extend(std::iter::repeat_n(None, SILENCE_FRAMES));
    spans.push(Span { start, end: frames.len(), phone: "sil".into() });
    let f0 = voices[spk].f0 * (1.0 + 0.02 * (rng.uniform() - 0.5));
    let samples = render(f0, phones, &frames, &mut rng);
    Ok(SynthUtterance {
        id,
        speaker: spk,
        alignment: Alignment { spans },
        waveform: Waveform::new(samples.into_iter().map(|s| s as f32).collect(), SAMPLE_RATE)?,
    })
}

/// Generate the corpus in memory. A pure function of `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.n_speakers < 2 || cfg.n_phones < 2 {
        return Err(Error::InvalidArgument("synthetic corpus needs at least 2 speakers and 2 phones".into()));
    }
    if cfg.min_phone_frames == 0 || cfg.max_phone_frames < cfg.min_phone_frames {
        return Err(Error::InvalidArgument("phone duration range is empty".into()));
    }
    let (voices, phones) = inventory(cfg);
    let mut utterances = Vec::with_capacity(cfg.n_speakers * cfg.utts_per_speaker);
    for spk in 0..cfg.n_speakers {
        for u in 0..cfg.utts_per_speaker {
            utterances.push(utterance(cfg, &voices, &phones, spk, u)?);
        }
    }
    utterances.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(SynthCorpus { voices, phones, utterances })
}

/// Generate and write `wav/`, `align/` and `corpus.jsonl` under `dir`.
pub fn synth_corpus(cfg: &SynthConfig, dir: &Path) -> Result<CorpusManifest> {
    let corpus = generate(cfg)?;
    for sub in ["wav", "align"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut records = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        let wav = format!("wav/{}.wav", u.id);
        let ali = format!("align/{}.ali", u.id);
        write_wav(&dir.join(&wav), &u.waveform)?;
        std::fs::write(dir.join(&ali), u.alignment.to_text()).map_err(|e| Error::io(dir.join(&ali), e))?;
        let v = &corpus.voices[u.speaker];
        records.push(ManifestRecord { feats: None, align: ali, speaker: v.name.clone(), split: v.split, audio: Some(wav) });
    }
    let manifest = CorpusManifest::new(records, dir)?;
    manifest.write(&dir.join("corpus.jsonl"))?;
    Ok(manifest)
}
