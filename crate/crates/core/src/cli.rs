//! Command-line front end.
//!
//! Every command validates its input paths before doing any work and writes
//! its effective configuration (after defaults) as JSON next to its outputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dsp::synth::{synth_corpus, SynthConfig};
use crate::dsp::{
    extract_corpus, write_features, CorpusManifest, ExtractConfig, FeatureKind, FeatureSegment, FrameMatrix,
    SegmentIndex, Split, FLOOR_DB,
};
use crate::error::{Error, Result};
use crate::latent::{
    average_segments, build_table, cosine_matrix, decode_attribute_repr, decode_latent, interpolate, make_shift,
    modify, offdiag_cov_profile, encode_dataset, sample_prior, AttributeTable, DecodeMode, LatentShift, Samples,
};
use crate::nn::Tensor;
use crate::probe::{assign_roles, posterior_shift_report, train_probe, ProbeClassifier, Role};
use crate::rng::Rng;
use crate::train::{train, Dataset, TrainConfig, TrainLog};
use crate::vae::{Arch, ModelKind, Normalizer};

/// dB range mapped linearly onto grey levels 0..=255 in PGM output.
pub const PGM_RANGE_DB: (f32, f32) = (-20.0, 80.0);

#[derive(Debug, Parser)]
#[command(name = "speech-vae", version, about = "Convolutional VAE for speech segments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic speaker/phone corpus (WAV + alignments + manifest).
    SynthData(SynthArgs),
    /// Compute Spec/FBank features and the labeled segment index.
    Extract(ExtractArgs),
    /// Train a VAE (or AE baseline) with dev-bound early stopping.
    Train(TrainArgs),
    /// Train a convolutional attribute classifier.
    ProbeTrain(ProbeTrainArgs),
    /// Write posterior means and log-variances of segments as CSV.
    Encode(EncodeArgs),
    /// Decode latent vectors from CSV into features and images.
    Decode(DecodeArgs),
    /// Build latent attribute representations.
    Attr(AttrArgs),
    /// Compute a latent attribute shift between two values.
    Shift(ShiftArgs),
    /// Apply a latent shift to segments.
    Modify(ModifyArgs),
    /// Decode convex combinations of two segments' latent codes.
    Interp(InterpArgs),
    /// Decode random draws from the prior.
    Sample(SampleArgs),
    /// Cosine similarities between attribute representations.
    DiagCos(DiagCosArgs),
    /// Sum of absolute off-diagonal latent covariances per dimension.
    DiagCov(DiagCovArgs),
    /// Probe posteriors before and after applying a shift.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Subset of a split's utterances, see [`assign_roles`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleArg {
    All,
    Fit,
    ProbeDev,
    Held,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    Spec,
    Fbank,
}

impl From<KindArg> for FeatureKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Spec => FeatureKind::Spec,
            KindArg::Fbank => FeatureKind::FBank,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    Vae,
    Ae,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Mean,
    Sample,
}

impl From<ModeArg> for DecodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Mean => DecodeMode::Mean,
            ModeArg::Sample => DecodeMode::Sample,
        }
    }
}

/// Which segments of an index a command works on.
#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SegmentSelect {
    /// Segment index written by `extract`.
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Utterance subset within the split.
    #[arg(long, value_enum, default_value = "all")]
    pub role: RoleArg,
    /// Role period: per speaker, the last of every N utterances is held out
    /// and the one before it is probe-dev.
    #[arg(long, default_value_t = 10)]
    pub role_period: usize,
}

impl SegmentSelect {
    fn load(&self) -> Result<Vec<FeatureSegment>> {
        let idx = SegmentIndex::read(&self.segments)?;
        let segs = idx.load(Some(self.split.into()))?;
        let want = match self.role {
            RoleArg::All => return Ok(segs),
            RoleArg::Fit => Role::Fit,
            RoleArg::ProbeDev => Role::ProbeDev,
            RoleArg::Held => Role::Held,
        };
        let roles = assign_roles(&segs, self.role_period)?;
        Ok(segs.into_iter().zip(roles).filter(|(_, r)| *r == want).map(|(s, _)| s).collect())
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub speakers: usize,
    #[arg(long, default_value_t = 10)]
    pub phones: usize,
    #[arg(long, default_value_t = 30)]
    pub utts_per_speaker: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "fbank")]
    pub feature_kind: KindArg,
    #[arg(long, default_value_t = 20)]
    pub seg_len: usize,
    /// Frames between segment starts; defaults to half the segment length.
    #[arg(long)]
    pub hop: Option<usize>,
}

/// Training overrides; unset fields fall back to the config file, then to
/// the defaults.
#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
pub struct TrainOverrides {
    /// JSON or `key = value` file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

impl TrainOverrides {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_train_config(p)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.l2 {
            cfg.l2 = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Layer widths; the defaults are the full-size network.
#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct WidthArgs {
    /// Filters of the three convolutional layers.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256])]
    pub conv: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    pub fc: usize,
}

impl WidthArgs {
    fn conv(&self) -> Result<[usize; 3]> {
        self.conv.as_slice().try_into().map_err(|_| Error::InvalidArgument("--conv takes three widths".into()))
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Segment index written by `extract` (train and dev splits are used).
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "vae")]
    pub model: ModelArg,
    #[command(flatten)]
    pub widths: WidthArgs,
    #[arg(long, default_value_t = 128)]
    pub latent: usize,
    /// Continue from `<out>/last.lsck` and `<out>/best.lsck`.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ProbeTrainArgs {
    /// Segment index; probes train on the fit role of the train split and
    /// stop early on the probe-dev role.
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub attribute: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub role_period: usize,
    #[command(flatten)]
    pub widths: WidthArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub select: SegmentSelect,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with columns `z0..z{d-1}` (or the `mu*` columns written by `encode`).
    #[arg(long)]
    pub latent: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AttrArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Segment index; the table uses the fit role of the train split.
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub role_period: usize,
    #[arg(long, value_delimiter = ',', default_values_t = ["speaker".to_string(), "phone".to_string()])]
    pub attributes: Vec<String>,
    /// Latent draws per segment; 0 averages posterior means.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON table.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the decoded representation and the feature-average
    /// baseline of every entry as PGM images here.
    #[arg(long)]
    pub images: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ShiftArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub attribute: String,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ModifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub shift: PathBuf,
    #[command(flatten)]
    pub select: SegmentSelect,
    #[arg(long, value_enum, default_value = "mean")]
    pub mode: ModeArg,
    /// Modify at most this many matching segments.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Write PGM images for the first N segments.
    #[arg(long, default_value_t = 5)]
    pub images: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct InterpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub select: SegmentSelect,
    /// Endpoint segments as `UTT@START`; `--a` is the α = 1 end.
    #[arg(long)]
    pub a: String,
    #[arg(long)]
    pub b: String,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DiagCosArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Restrict to these attributes (all when empty).
    #[arg(long, value_delimiter = ',')]
    pub attributes: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DiagCovArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub select: SegmentSelect,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Probe for the shifted attribute.
    #[arg(long)]
    pub probe_a: PathBuf,
    /// Probe for the attribute held fixed.
    #[arg(long)]
    pub probe_b: PathBuf,
    #[arg(long)]
    pub shift: PathBuf,
    /// Segments are taken from the held role of the train split by default.
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long, value_enum, default_value = "held")]
    pub role: RoleArg,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 10)]
    pub role_period: usize,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::SynthData(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::ProbeTrain(a) => cmd_probe_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Attr(a) => cmd_attr(a),
        Command::Shift(a) => cmd_shift(a),
        Command::Modify(a) => cmd_modify(a),
        Command::Interp(a) => cmd_interp(a),
        Command::Sample(a) => cmd_sample(a),
        Command::DiagCos(a) => cmd_diag_cos(a),
        Command::DiagCov(a) => cmd_diag_cov(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found")))
    }
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn ensure_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => ensure_dir(d),
        _ => Ok(()),
    }
}

fn write_text(p: &Path, s: &str) -> Result<()> {
    std::fs::write(p, s).map_err(|e| Error::io(p, e))
}

/// Effective configuration of a command, next to its outputs.
fn write_config<C: Serialize>(path: &Path, command: &str, cfg: &C) -> Result<()> {
    let v = serde_json::json!({ "command": command, "config": cfg });
    write_text(path, &(serde_json::to_string_pretty(&v)? + "\n"))
}

/// `<out>.config.json` for a command whose output is a single file.
fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

/// Read training settings from JSON, or from `key = value` lines.
pub fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(cfg) = serde_json::from_str::<TrainConfig>(&text) {
        return Ok(cfg);
    }
    let mut map = serde_json::Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("line {}: expected key = value", i + 1)))?;
        let v: serde_json::Value = serde_json::from_str(v.trim())
            .map_err(|_| Error::format(path, format!("line {}: value must be a number", i + 1)))?;
        map.insert(k.trim().to_string(), v);
    }
    serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| Error::format(path, e.to_string()))
}

/// Grey-level image of one `T×F` dB segment: time runs left to right, the
/// lowest frequency bin is the bottom row.
pub fn pgm(values_db: &[f32], n_frames: usize, n_bins: usize) -> Vec<u8> {
    let (lo, hi) = PGM_RANGE_DB;
    let mut out = format!("P5\n{n_frames} {n_bins}\n255\n").into_bytes();
    for f in (0..n_bins).rev() {
        for t in 0..n_frames {
            let v = values_db[t * n_bins + f];
            let g = ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0);
            out.push(g as u8);
        }
    }
    out
}

fn write_pgm(path: &Path, values_db: &[f32], n_frames: usize, n_bins: usize) -> Result<()> {
    std::fs::write(path, pgm(values_db, n_frames, n_bins)).map_err(|e| Error::io(path, e))
}

/// Model-space batch back to dB, floored like extracted features.
fn to_db(ckpt: &Checkpoint, y: &Tensor<f32>) -> Vec<f32> {
    ckpt.normalizer.invert(y.data()).into_iter().map(|v| v.max(FLOOR_DB)).collect()
}

fn write_segments_lsf(path: &Path, kind: FeatureKind, values_db: Vec<f32>, n_frames: usize) -> Result<()> {
    write_features(path, &FrameMatrix::new(values_db, n_frames, kind)?)
}

fn load_checkpoint(p: &Path) -> Result<Checkpoint> {
    require_file(p)?;
    Checkpoint::read(p)
}

fn model_input(ckpt: &Checkpoint, segs: &[FeatureSegment]) -> Result<Dataset> {
    for s in segs {
        ckpt.check_features(s.kind, s.n_frames, s.n_bins)?;
    }
    Dataset::new(segs, &ckpt.normalizer, ckpt.arch())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig::new(a.speakers, a.phones, a.utts_per_speaker, a.seed);
    eprintln!("synth-data: {} speakers x {} utterances, seed {}", a.speakers, a.utts_per_speaker, a.seed);
    synth_corpus(&cfg, &a.out)?;
    write_config(&a.out.join("config.json"), "synth-data", a)
}

fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    require_file(&a.manifest)?;
    let manifest = CorpusManifest::read(&a.manifest)?;
    let cfg = ExtractConfig {
        feature_kind: a.feature_kind.into(),
        seg_len: a.seg_len,
        hop: a.hop.unwrap_or((a.seg_len / 2).max(1)),
    };
    let idx = extract_corpus(&manifest, &cfg, &a.out)?;
    eprintln!("extract: {} segments from {} utterances", idx.records.len(), manifest.records.len());
    write_config(&a.out.join("config.json"), "extract", &serde_json::json!({ "args": a, "effective": cfg }))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    require_file(&a.segments)?;
    let cfg = a.train.resolve()?;
    let idx = SegmentIndex::read(&a.segments)?;
    let train_segs = idx.load(Some(Split::Train))?;
    let dev_segs = idx.load(Some(Split::Dev))?;
    if train_segs.is_empty() {
        return Err(Error::Data("training needs segments in the train split".into()));
    }
    if dev_segs.is_empty() {
        return Err(Error::Data("early stopping on the dev bound needs segments in the dev split".into()));
    }
    ensure_dir(&a.out)?;
    let (last_path, best_path) = (a.out.join("last.lsck"), a.out.join("best.lsck"));
    let (start, best) = if a.resume {
        let last = load_checkpoint(&last_path)?;
        let best = load_checkpoint(&best_path)?;
        (last, Some(best))
    } else {
        let first = &train_segs[0];
        let arch = Arch {
            seg_len: first.n_frames,
            n_bins: first.n_bins,
            feature_kind: first.kind,
            conv: a.widths.conv()?,
            fc: a.widths.fc,
            latent: a.latent,
        };
        let kind = match a.model {
            ModelArg::Vae => ModelKind::Vae,
            ModelArg::Ae => ModelKind::Ae,
        };
        (Checkpoint::init(arch, kind, Normalizer::fit(&train_segs)?, cfg.seed)?, None)
    };
    let arch = start.arch().clone();
    let train_data = Dataset::new(&train_segs, &start.normalizer, &arch)?;
    let dev_data = Dataset::new(&dev_segs, &start.normalizer, &arch)?;
    write_config(
        &a.out.join("config.json"),
        "train",
        &serde_json::json!({ "args": a, "train": cfg, "arch": arch }),
    )?;
    eprintln!("train: {} train / {} dev segments, seed {}", train_data.len(), dev_data.len(), cfg.seed);
    let log_path = a.out.join("train_log.csv");
    let mut hook = |cur: &Checkpoint, best: &Checkpoint, log: &TrainLog| -> Result<()> {
        let r = log.rows.last().expect("log has a row");
        eprintln!("epoch {:>3}  train {:>12.3}  dev {:>12.3}  ({:.1}s)", r.epoch, r.train_bound, r.dev_bound, r.seconds);
        best.write(&best_path)?;
        cur.write(&last_path)?;
        log.write_csv(&log_path)
    };
    let out = train(start, best, &train_data, &dev_data, &cfg, Some(&mut hook))?;
    out.best.write(&best_path)?;
    out.last.write(&last_path)?;
    out.log.write_csv(&log_path)?;
    eprintln!(
        "best epoch {} (dev bound {:.3}){}",
        out.log.best_epoch,
        out.log.best_dev_bound().unwrap_or(f64::NAN),
        if out.stopped_early { ", stopped early" } else { "" }
    );
    Ok(())
}

fn cmd_probe_train(a: &ProbeTrainArgs) -> Result<()> {
    require_file(&a.segments)?;
    let cfg = a.train.resolve()?;
    let idx = SegmentIndex::read(&a.segments)?;
    let segs = idx.load(Some(Split::Train))?;
    let roles = assign_roles(&segs, a.role_period)?;
    let pick = |want: Role| -> Vec<FeatureSegment> {
        segs.iter().zip(&roles).filter(|(_, r)| **r == want).map(|(s, _)| s.clone()).collect()
    };
    let (fit, dev) = (pick(Role::Fit), pick(Role::ProbeDev));
    ensure_dir(&a.out)?;
    write_config(&a.out.join("config.json"), "probe-train", &serde_json::json!({ "args": a, "train": cfg }))?;
    let out = train_probe(&a.attribute, &fit, &dev, a.widths.conv()?, a.widths.fc, &cfg)?;
    out.probe.write(&a.out.join("probe.lspr"))?;
    write_text(&a.out.join("probe_log.csv"), &out.log_csv())?;
    eprintln!(
        "probe {}: {} classes, best epoch {} dev accuracy {:.4}",
        a.attribute,
        out.probe.classes.len(),
        out.best_epoch,
        out.log[out.best_epoch].dev_acc
    );
    Ok(())
}

fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    require_file(&a.select.segments)?;
    let segs = a.select.load()?;
    let data = model_input(&ckpt, &segs)?;
    let (means, log_vars) = encode_dataset(&ckpt.model, &data)?;
    let d = ckpt.arch().latent;
    let mut s = String::from("utt,start,speaker,phone");
    for k in 0..d {
        write!(s, ",mu{k}").unwrap();
    }
    for k in 0..d {
        write!(s, ",logvar{k}").unwrap();
    }
    s.push('\n');
    for ((seg, m), lv) in segs.iter().zip(&means).zip(&log_vars) {
        write!(s, "{},{},{},{}", seg.utt, seg.start, seg.label("speaker").unwrap_or(""), seg.label("phone").unwrap_or(""))
            .unwrap();
        for v in m.iter().chain(lv) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    ensure_parent(&a.out)?;
    write_text(&a.out, &s)?;
    write_config(&sidecar(&a.out), "encode", a)
}

/// Latent rows from a CSV with `z*` columns, or else `mu*` columns.
fn read_latent_csv(path: &Path, dim: usize) -> Result<Vec<Vec<f32>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::format(path, "empty CSV"))?.split(',').collect();
    let cols = |prefix: &str| -> Option<Vec<usize>> {
        (0..dim).map(|k| header.iter().position(|h| *h == format!("{prefix}{k}"))).collect()
    };
    let cols = cols("z")
        .or_else(|| cols("mu"))
        .ok_or_else(|| Error::format(path, format!("need columns z0..z{} or mu0..mu{}", dim - 1, dim - 1)))?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let row = cols
            .iter()
            .map(|&c| {
                f.get(c)
                    .and_then(|v| v.trim().parse::<f32>().ok())
                    .ok_or_else(|| Error::format(path, format!("line {}: bad value in column {c}", i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(path, "no latent rows"));
    }
    Ok(rows)
}

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    require_file(&a.latent)?;
    let arch = ckpt.arch().clone();
    let rows = read_latent_csv(&a.latent, arch.latent)?;
    let z = Tensor::from_vec(&[rows.len(), arch.latent], rows.concat())?;
    let mut rng = Rng::for_purpose(a.seed, "decode");
    let y = decode_latent(&ckpt.model, &z, a.mode.into(), &mut rng)?;
    let db = to_db(&ckpt, &y);
    ensure_dir(&a.out)?;
    let item = arch.seg_len * arch.n_bins;
    for (k, seg) in db.chunks(item).enumerate() {
        write_pgm(&a.out.join(format!("decoded_{k:03}.pgm")), seg, arch.seg_len, arch.n_bins)?;
    }
    write_segments_lsf(&a.out.join("decoded.lsf"), arch.feature_kind, db, rows.len() * arch.seg_len)?;
    write_config(&a.out.join("config.json"), "decode", a)
}

fn fit_segments(path: &Path, role_period: usize) -> Result<Vec<FeatureSegment>> {
    let segs = SegmentIndex::read(path)?.load(Some(Split::Train))?;
    let roles = assign_roles(&segs, role_period)?;
    Ok(segs.into_iter().zip(roles).filter(|(_, r)| *r == Role::Fit).map(|(s, _)| s).collect())
}

fn cmd_attr(a: &AttrArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    require_file(&a.segments)?;
    let segs = fit_segments(&a.segments, a.role_period)?;
    let data = model_input(&ckpt, &segs)?;
    let attrs: Vec<&str> = a.attributes.iter().map(String::as_str).collect();
    let table = build_table(&ckpt.model, &data, &segs, &attrs, Samples::from_count(a.samples), a.seed)?;
    ensure_parent(&a.out)?;
    table.write(&a.out)?;
    if let Some(dir) = &a.images {
        ensure_dir(dir)?;
        let arch = ckpt.arch();
        for e in &table.entries {
            let y = decode_attribute_repr(&ckpt.model, &e.mean)?;
            let stem = format!("{}_{}", e.attribute, e.value);
            write_pgm(&dir.join(format!("{stem}.pgm")), &to_db(&ckpt, &y), arch.seg_len, arch.n_bins)?;
            let members: Vec<&FeatureSegment> =
                segs.iter().filter(|s| s.label(&e.attribute) == Some(e.value.as_str())).collect();
            write_pgm(&dir.join(format!("{stem}.avg.pgm")), &average_segments(&members)?, arch.seg_len, arch.n_bins)?;
        }
    }
    eprintln!("attr: {} entries", table.entries.len());
    write_config(&sidecar(&a.out), "attr", a)
}

fn cmd_shift(a: &ShiftArgs) -> Result<()> {
    require_file(&a.table)?;
    let table = AttributeTable::read(&a.table)?;
    let shift = make_shift(&table, &a.attribute, &a.source, &a.target)?;
    ensure_parent(&a.out)?;
    shift.write(&a.out)?;
    write_config(&sidecar(&a.out), "shift", a)
}

fn cmd_modify(a: &ModifyArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    require_file(&a.shift)?;
    require_file(&a.select.segments)?;
    let shift = LatentShift::read(&a.shift)?;
    let mut segs: Vec<FeatureSegment> = a
        .select
        .load()?
        .into_iter()
        .filter(|s| s.label(&shift.attribute) == Some(shift.source.as_str()))
        .collect();
    if let Some(n) = a.limit {
        segs.truncate(n);
    }
    if segs.is_empty() {
        return Err(Error::Data(format!("no selected segment has {}={}", shift.attribute, shift.source)));
    }
    let data = model_input(&ckpt, &segs)?;
    let arch = ckpt.arch().clone();
    let idx: Vec<usize> = (0..data.len()).collect();
    let x = data.batch::<f32>(&idx);
    let mut rng = Rng::for_purpose(a.seed, "modify");
    let zero = vec![0.0; arch.latent];
    let recon = to_db(&ckpt, &modify(&ckpt.model, &x, &zero, a.mode.into(), &mut rng)?);
    let modified = to_db(&ckpt, &modify(&ckpt.model, &x, &shift.v, a.mode.into(), &mut rng)?);
    ensure_dir(&a.out)?;
    let item = arch.seg_len * arch.n_bins;
    for (k, s) in segs.iter().take(a.images).enumerate() {
        let r = k * item..(k + 1) * item;
        write_pgm(&a.out.join(format!("{k:03}_original.pgm")), &s.values, arch.seg_len, arch.n_bins)?;
        write_pgm(&a.out.join(format!("{k:03}_reconstructed.pgm")), &recon[r.clone()], arch.seg_len, arch.n_bins)?;
        write_pgm(&a.out.join(format!("{k:03}_modified.pgm")), &modified[r], arch.seg_len, arch.n_bins)?;
    }
    let n_frames = segs.len() * arch.seg_len;
    write_segments_lsf(&a.out.join("reconstructed.lsf"), arch.feature_kind, recon, n_frames)?;
    write_segments_lsf(&a.out.join("modified.lsf"), arch.feature_kind, modified, n_frames)?;
    let mut list = String::from("index,utt,start\n");
    for (k, s) in segs.iter().enumerate() {
        writeln!(list, "{k},{},{}", s.utt, s.start).unwrap();
    }
    write_text(&a.out.join("segments.csv"), &list)?;
    eprintln!("modify: {} segments {}={} -> {}", segs.len(), shift.attribute, shift.source, shift.target);
    write_config(&a.out.join("config.json"), "modify", a)
}

fn parse_segment_ref(s: &str) -> Result<(&str, usize)> {
    let (utt, start) =
        s.rsplit_once('@').ok_or_else(|| Error::InvalidArgument(format!("segment reference {s:?} is not UTT@START")))?;
    let start = start.parse().map_err(|_| Error::InvalidArgument(format!("bad start frame in {s:?}")))?;
    Ok((utt, start))
}

fn cmd_interp(a: &InterpArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    require_file(&a.select.segments)?;
    if a.steps < 2 {
        return Err(Error::InvalidArgument("interpolation needs at least 2 steps".into()));
    }
    let segs = a.select.load()?;
    let find = |r: &str| -> Result<FeatureSegment> {
        let (utt, start) = parse_segment_ref(r)?;
        segs.iter()
            .find(|s| s.utt == utt && s.start == start)
            .cloned()
            .ok_or_else(|| Error::Data(format!("segment {r} not in the selection")))
    };
    let pair = [find(&a.a)?, find(&a.b)?];
    let data = model_input(&ckpt, &pair)?;
    let (means, _) = encode_dataset(&ckpt.model, &data)?;
    let za: Vec<f64> = means[0].iter().map(|&v| v as f64).collect();
    let zb: Vec<f64> = means[1].iter().map(|&v| v as f64).collect();
    let arch = ckpt.arch().clone();
    let mut z = Vec::with_capacity(a.steps * arch.latent);
    let alphas: Vec<f64> = (0..a.steps).map(|k| k as f64 / (a.steps - 1) as f64).collect();
    for &alpha in &alphas {
        z.extend(interpolate(&za, &zb, alpha)?.into_iter().map(|v| v as f32));
    }
    let y = ckpt.model.decode(&Tensor::from_vec(&[a.steps, arch.latent], z)?)?.mean;
    let db = to_db(&ckpt, &y);
    ensure_dir(&a.out)?;
    let item = arch.seg_len * arch.n_bins;
    let mut list = String::from("index,alpha\n");
    for (k, (seg, alpha)) in db.chunks(item).zip(&alphas).enumerate() {
        write_pgm(&a.out.join(format!("interp_{k:02}.pgm")), seg, arch.seg_len, arch.n_bins)?;
        writeln!(list, "{k},{alpha}").unwrap();
    }
    write_text(&a.out.join("alphas.csv"), &list)?;
    write_config(&a.out.join("config.json"), "interp", a)
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let (_, y) = sample_prior(&ckpt.model, a.n, a.seed)?;
    let db = to_db(&ckpt, &y);
    let arch = ckpt.arch().clone();
    ensure_dir(&a.out)?;
    for (k, seg) in db.chunks(arch.seg_len * arch.n_bins).enumerate() {
        write_pgm(&a.out.join(format!("sample_{k:02}.pgm")), seg, arch.seg_len, arch.n_bins)?;
    }
    write_segments_lsf(&a.out.join("samples.lsf"), arch.feature_kind, db, a.n * arch.seg_len)?;
    write_config(&a.out.join("config.json"), "sample", a)
}

fn cmd_diag_cos(a: &DiagCosArgs) -> Result<()> {
    require_file(&a.table)?;
    let table = AttributeTable::read(&a.table)?;
    let entries: Vec<_> =
        table.entries.iter().filter(|e| a.attributes.is_empty() || a.attributes.contains(&e.attribute)).collect();
    if entries.is_empty() {
        return Err(Error::Data("no table entries selected".into()));
    }
    let vecs: Vec<Vec<f64>> = entries.iter().map(|e| e.mean.iter().map(|&v| v as f64).collect()).collect();
    let m = cosine_matrix(&vecs)?;
    let names: Vec<String> = entries.iter().map(|e| format!("{}={}", e.attribute, e.value)).collect();
    let mut s = format!("entry,{}\n", names.join(","));
    for (name, row) in names.iter().zip(&m) {
        s.push_str(name);
        for v in row {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    ensure_parent(&a.out)?;
    write_text(&a.out, &s)?;
    write_config(&sidecar(&a.out), "diag-cos", a)
}

fn cmd_diag_cov(a: &DiagCovArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    require_file(&a.select.segments)?;
    let segs = a.select.load()?;
    let data = model_input(&ckpt, &segs)?;
    let (means, _) = encode_dataset(&ckpt.model, &data)?;
    let z: Vec<Vec<f64>> = means.iter().map(|m| m.iter().map(|&v| v as f64).collect()).collect();
    let o = offdiag_cov_profile(&z)?;
    let mut s = String::from("dim,offdiag_abs_cov_sum\n");
    for (d, v) in o.iter().enumerate() {
        writeln!(s, "{d},{v}").unwrap();
    }
    ensure_parent(&a.out)?;
    write_text(&a.out, &s)?;
    write_config(&sidecar(&a.out), "diag-cov", a)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    for p in [&a.probe_a, &a.probe_b, &a.shift, &a.segments] {
        require_file(p)?;
    }
    let pa = ProbeClassifier::read(&a.probe_a)?;
    let pb = ProbeClassifier::read(&a.probe_b)?;
    let shift = LatentShift::read(&a.shift)?;
    let select = SegmentSelect { segments: a.segments.clone(), split: a.split, role: a.role, role_period: a.role_period };
    let mut segs: Vec<FeatureSegment> = select
        .load()?
        .into_iter()
        .filter(|s| s.label(&shift.attribute) == Some(shift.source.as_str()))
        .filter(|s| s.label(&pb.attribute).is_some_and(|v| pb.class_index(v).is_some()))
        .collect();
    if let Some(n) = a.limit {
        segs.truncate(n);
    }
    let report = posterior_shift_report(&pa, &pb, &ckpt, &segs, &shift)?;
    ensure_dir(&a.out)?;
    write_text(&a.out.join("report.csv"), &report.to_csv())?;
    write_text(&a.out.join("report.txt"), &report.to_table())?;
    print!("{}", report.to_table());
    write_config(&a.out.join("config.json"), "report", a)
}
