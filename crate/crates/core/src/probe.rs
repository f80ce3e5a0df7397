//! Convolutional attribute classifiers and the before/after posterior
//! report used to judge latent attribute modification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::codec::{Reader, Writer};
use crate::dsp::{FeatureKind, FeatureSegment};
use crate::error::{Error, Result};
use crate::latent::{modify, DecodeMode, LatentShift};
use crate::nn::{AdamState, Linear, Param, Parameterized, Sequential, Tensor};
use crate::rng::Rng;
use crate::train::{batch_ranges, Dataset, EarlyStopping, TrainConfig};
use crate::vae::{recognition_trunk, Arch, Normalizer};

pub const PROBE_MAGIC: &[u8; 4] = b"LSPR";
pub const PROBE_VERSION: u32 = 1;
const EVAL_BATCH: usize = 256;

/// Which part of the train split an utterance serves when speakers must be
/// shared between probe training and evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    /// Probe training and attribute tables.
    Fit,
    /// Probe early stopping.
    ProbeDev,
    /// Held out for modification experiments.
    Held,
}

/// Assign roles per utterance: within each speaker, utterances sorted by id
/// take roles by ordinal, the last of every `every` is held out and the one
/// before it is probe-dev. Returns one role per segment.
pub fn assign_roles(segments: &[FeatureSegment], every: usize) -> Result<Vec<Role>> {
    if every < 3 {
        return Err(Error::InvalidArgument("role period must be at least 3".into()));
    }
    let mut by_speaker: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for s in segments {
        let spk = s.label("speaker").ok_or_else(|| Error::Data(format!("segment of {} has no speaker", s.utt)))?;
        by_speaker.entry(spk).or_default().insert(&s.utt);
    }
    let mut role_of: BTreeMap<&str, Role> = BTreeMap::new();
    for utts in by_speaker.values() {
        for (k, u) in utts.iter().enumerate() {
            let r = match k % every {
                x if x == every - 1 => Role::Held,
                x if x == every - 2 => Role::ProbeDev,
                _ => Role::Fit,
            };
            role_of.insert(u, r);
        }
    }
    Ok(segments.iter().map(|s| role_of[s.utt.as_str()]).collect())
}

/// Raw dB segments as a `(B, 1, T, F)` tensor.
pub fn segments_tensor(segments: &[&FeatureSegment]) -> Result<Tensor<f32>> {
    let first = segments.first().ok_or_else(|| Error::Data("no segments".into()))?;
    let items: Vec<&[f32]> = segments.iter().map(|s| s.values.as_slice()).collect();
    Tensor::stack(&items, &[1, first.n_frames, first.n_bins])
}

/// Table-1 recognition trunk with a softmax output over attribute values.
#[derive(Clone, Debug)]
pub struct ProbeClassifier {
    pub attribute: String,
    pub classes: Vec<String>,
    pub arch: Arch,
    pub normalizer: Normalizer,
    pub trunk: Sequential<f32>,
    pub head: Linear<f32>,
}

impl Parameterized<f32> for ProbeClassifier {
    fn params(&self) -> Vec<&Param<f32>> {
        let mut v = self.trunk.params();
        v.push(&self.head.weight);
        v.extend(self.head.bias.as_ref());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f32>> {
        let mut v = self.trunk.params_mut();
        v.push(&mut self.head.weight);
        v.extend(self.head.bias.as_mut());
        v
    }
}

fn softmax_row(logits: &[f32]) -> Vec<f64> {
    let top = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let e: Vec<f64> = logits.iter().map(|&v| (v as f64 - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl ProbeClassifier {
    pub fn new(attribute: &str, classes: Vec<String>, arch: Arch, normalizer: Normalizer, rng: &mut Rng) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Data(format!("attribute {attribute:?} needs at least two classes")));
        }
        let trunk = recognition_trunk(&arch, rng)?;
        let head = Linear::new("probe.out", arch.fc, classes.len(), true, rng);
        Ok(Self { attribute: attribute.into(), classes, arch, normalizer, trunk, head })
    }

    pub fn class_index(&self, value: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == value)
    }

    fn logits_infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.head.forward(&self.trunk.forward_infer(x)?)
    }

    /// Class posteriors for raw dB segments `(B, 1, T, F)`.
    pub fn posteriors(&self, x_db: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let b = x_db.shape().first().copied().unwrap_or(0);
        x_db.expect_shape(&[b, 1, self.arch.seg_len, self.arch.n_bins], "probe input")?;
        let item = self.arch.seg_len * self.arch.n_bins;
        let mut out = Vec::with_capacity(b);
        for start in (0..b).step_by(EVAL_BATCH) {
            let end = (start + EVAL_BATCH).min(b);
            let norm = self.normalizer.apply(&x_db.data()[start * item..end * item]);
            let x = Tensor::from_vec(&[end - start, 1, self.arch.seg_len, self.arch.n_bins], norm)?;
            let logits = self.logits_infer(&x)?;
            out.extend((0..end - start).map(|i| softmax_row(logits.item(i))));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(PROBE_MAGIC);
        w.u32(PROBE_VERSION);
        w.str(&self.attribute);
        w.u32(self.classes.len() as u32);
        for c in &self.classes {
            w.str(c);
        }
        let a = &self.arch;
        w.u32(a.seg_len as u32);
        w.u32(a.n_bins as u32);
        w.u8(a.feature_kind.code());
        for c in a.conv {
            w.u32(c as u32);
        }
        w.u32(a.fc as u32);
        w.f32s(&self.normalizer.mean);
        w.f32s(&self.normalizer.std);
        for p in self.params() {
            w.str(&p.name);
            w.f32s(p.value.data());
        }
        for (name, bn) in self.trunk.batchnorms() {
            w.str(name);
            w.f32s(&bn.running_mean);
            w.f32s(&bn.running_var);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4)? != PROBE_MAGIC {
            return Err(r.err("not a probe file (bad magic)"));
        }
        if r.u32()? != PROBE_VERSION {
            return Err(r.err("unsupported probe version"));
        }
        let attribute = r.str()?;
        let n = r.usize()?;
        let classes = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let seg_len = r.usize()?;
        let n_bins = r.usize()?;
        let feature_kind = FeatureKind::from_code(r.u8()?).ok_or_else(|| r.err("unknown feature kind"))?;
        let conv = [r.usize()?, r.usize()?, r.usize()?];
        let fc = r.usize()?;
        let arch = Arch { seg_len, n_bins, feature_kind, conv, fc, latent: classes.len() };
        let normalizer = Normalizer { mean: r.f32s(n_bins)?, std: r.f32s(n_bins)? };
        let mut probe = Self::new(&attribute, classes, arch, normalizer, &mut Rng::new(0))
            .map_err(|e| r.err(&e.to_string()))?;
        for p in probe.params_mut() {
            let name = r.str()?;
            if name != p.name {
                return Err(r.err(&format!("expected parameter {}, found {name}", p.name)));
            }
            let shape = p.value.shape().to_vec();
            p.value = Tensor::from_vec(&shape, r.f32s(p.value.len())?)?;
        }
        for (name, bn) in probe.trunk.batchnorms_mut() {
            if r.str()? != name {
                return Err(r.err(&format!("expected batch-norm {name}")));
            }
            bn.running_mean = r.f32s(bn.channels())?;
            bn.running_var = r.f32s(bn.channels())?;
        }
        if !r.at_end() {
            return Err(r.err("trailing bytes after probe"));
        }
        Ok(probe)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// One train-mode step of mean cross-entropy on `x` with integer labels.
    /// Returns `(loss, correct)`.
    fn train_step(&mut self, x: &Tensor<f32>, y: &[usize]) -> Result<(f64, usize)> {
        let (h, caches) = self.trunk.forward_train(x)?;
        let logits = self.head.forward(&h)?;
        let b = y.len();
        let k = self.classes.len();
        let mut grad = vec![0f32; b * k];
        let (mut loss, mut correct) = (0.0, 0);
        for i in 0..b {
            let p = softmax_row(logits.item(i));
            loss -= p[y[i]].max(f64::MIN_POSITIVE).ln();
            if argmax(&p) == y[i] {
                correct += 1;
            }
            for c in 0..k {
                let t = if c == y[i] { 1.0 } else { 0.0 };
                grad[i * k + c] = ((p[c] - t) / b as f64) as f32;
            }
        }
        if !loss.is_finite() {
            return Err(Error::non_finite("probe cross-entropy"));
        }
        let dh = self.head.backward(&h, &Tensor::from_vec(&[b, k], grad)?)?;
        self.trunk.backward(&caches, &dh)?;
        Ok((loss / b as f64, correct))
    }

    fn accuracy(&self, data: &Dataset, labels: &[usize]) -> Result<f64> {
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut correct = 0;
        for chunk in idx.chunks(EVAL_BATCH) {
            let logits = self.logits_infer(&data.batch::<f32>(chunk))?;
            for (r, &i) in chunk.iter().enumerate() {
                if argmax(logits.item(r)) == labels[i] {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / data.len().max(1) as f64)
    }
}

fn argmax<V: PartialOrd + Copy>(v: &[V]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub dev_acc: f64,
}

#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    /// Classifier from the epoch with the best dev accuracy.
    pub probe: ProbeClassifier,
    pub log: Vec<ProbeEpoch>,
    pub best_epoch: usize,
}

impl ProbeOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,dev_acc\n");
        for r in &self.log {
            writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.dev_acc).unwrap();
        }
        s
    }
}

/// Train a classifier for `attribute` on `train` (raw dB), early stopping on
/// accuracy over `dev`. Classes are the attribute values present in `train`;
/// dev segments with other values are ignored.
pub fn train_probe(
    attribute: &str,
    train: &[FeatureSegment],
    dev: &[FeatureSegment],
    conv: [usize; 3],
    fc: usize,
    cfg: &TrainConfig,
) -> Result<ProbeOutcome> {
    cfg.validate()?;
    let labeled = |segs: &[FeatureSegment]| -> Vec<FeatureSegment> {
        segs.iter().filter(|s| s.label(attribute).is_some()).cloned().collect()
    };
    let train = labeled(train);
    if train.is_empty() {
        return Err(Error::Data(format!("no train segment carries attribute {attribute:?}")));
    }
    let classes: Vec<String> =
        train.iter().filter_map(|s| s.label(attribute)).collect::<BTreeSet<_>>().into_iter().map(String::from).collect();
    let dev: Vec<FeatureSegment> =
        labeled(dev).into_iter().filter(|s| classes.iter().any(|c| Some(c.as_str()) == s.label(attribute))).collect();
    if dev.is_empty() {
        return Err(Error::Data(format!("early stopping needs dev segments labeled with {attribute:?}")));
    }
    let first = &train[0];
    let arch = Arch { seg_len: first.n_frames, n_bins: first.n_bins, feature_kind: first.kind, conv, fc, latent: classes.len() };
    let normalizer = Normalizer::fit(&train)?;
    let mut probe = ProbeClassifier::new(attribute, classes, arch.clone(), normalizer, &mut Rng::for_purpose(cfg.seed, "probe-init"))?;
    let label_ids = |segs: &[FeatureSegment], p: &ProbeClassifier| -> Vec<usize> {
        segs.iter().map(|s| p.class_index(s.label(attribute).unwrap()).unwrap()).collect()
    };
    let train_data = Dataset::new(&train, &probe.normalizer, &arch)?;
    let dev_data = Dataset::new(&dev, &probe.normalizer, &arch)?;
    let (ytrain, ydev) = (label_ids(&train, &probe), label_ids(&dev, &probe));
    if train_data.len() < 2 {
        return Err(Error::Data("probe training needs at least 2 segments".into()));
    }

    let adam_cfg = cfg.adam();
    let mut adam = AdamState::new(&probe.params());
    let mut rng = Rng::for_purpose(cfg.seed, "probe-train");
    let dev0 = probe.accuracy(&dev_data, &ydev)?;
    let mut log = vec![ProbeEpoch { epoch: 0, train_loss: f64::NAN, train_acc: f64::NAN, dev_acc: dev0 }];
    let mut stopper = EarlyStopping::new(cfg.patience, 0, dev0);
    let mut best = probe.clone();
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        rng.shuffle(&mut order);
        let (mut loss, mut correct) = (0.0, 0);
        for r in batch_ranges(order.len(), cfg.batch_size) {
            let idx = &order[r];
            let y: Vec<usize> = idx.iter().map(|&i| ytrain[i]).collect();
            probe.zero_grad();
            let (l, c) = probe.train_step(&train_data.batch::<f32>(idx), &y)?;
            loss += l * idx.len() as f64;
            correct += c;
            adam.step(&adam_cfg, &mut probe.params_mut())?;
        }
        let n = train_data.len() as f64;
        let dev_acc = probe.accuracy(&dev_data, &ydev)?;
        log.push(ProbeEpoch { epoch, train_loss: loss / n, train_acc: correct as f64 / n, dev_acc });
        let d = stopper.observe(epoch, dev_acc);
        if d.improved {
            best = probe.clone();
        }
        if d.stop {
            break;
        }
    }
    Ok(ProbeOutcome { probe: best, log, best_epoch: stopper.best_epoch })
}

/// Mean posteriors in one condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftRow {
    /// `P(a = source)` from the shifted attribute's probe.
    pub source: f64,
    /// `P(a = target)`.
    pub target: f64,
    /// `P(b = own value)` from the fixed attribute's probe.
    pub fixed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftReport {
    pub attribute: String,
    pub source: String,
    pub target: String,
    pub fixed_attribute: String,
    pub count: usize,
    pub before: ShiftRow,
    pub after: ShiftRow,
}

impl ShiftReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("condition,count,attribute,source,target,fixed_attribute,p_source,p_target,p_fixed\n");
        for (name, r) in [("before", &self.before), ("after", &self.after)] {
            writeln!(
                s,
                "{name},{},{},{},{},{},{},{},{}",
                self.count, self.attribute, self.source, self.target, self.fixed_attribute, r.source, r.target, r.fixed
            )
            .unwrap();
        }
        s
    }

    /// Aligned text table of percentages.
    pub fn to_table(&self) -> String {
        let heads = [
            format!("{}={}", self.attribute, self.source),
            format!("{}={}", self.attribute, self.target),
            format!("{} (original)", self.fixed_attribute),
        ];
        let w = heads.iter().map(String::len).max().unwrap().max(8);
        let mut s = format!("Average posteriors over {} instances\n", self.count);
        write!(s, "{:<8}", "").unwrap();
        for h in &heads {
            write!(s, "  {h:>w$}").unwrap();
        }
        s.push('\n');
        for (name, r) in [("before", &self.before), ("after", &self.after)] {
            write!(s, "{name:<8}").unwrap();
            for v in [r.source, r.target, r.fixed] {
                write!(s, "  {:>w$}", format!("{:.2}%", 100.0 * v)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Posterior of each attribute before (plain mean-mode reconstruction) and
/// after (reconstruction with `shift` applied) for `segments` (raw dB), which
/// must all carry `shift.source` for the shifted attribute and a label for
/// `probe_b`'s attribute.
pub fn posterior_shift_report(
    probe_a: &ProbeClassifier,
    probe_b: &ProbeClassifier,
    ckpt: &Checkpoint,
    segments: &[FeatureSegment],
    shift: &LatentShift,
) -> Result<ShiftReport> {
    if segments.is_empty() {
        return Err(Error::Data("shift report needs at least one segment".into()));
    }
    if probe_a.attribute != shift.attribute {
        return Err(Error::InvalidArgument(format!(
            "probe classifies {:?} but the shift is on {:?}",
            probe_a.attribute, shift.attribute
        )));
    }
    let (si, ti) = match (probe_a.class_index(&shift.source), probe_a.class_index(&shift.target)) {
        (Some(s), Some(t)) => (s, t),
        _ => return Err(Error::Data("shift values are not classes of the probe".into())),
    };
    // Canonical order so the averages do not depend on the caller's order.
    let mut segs: Vec<&FeatureSegment> = segments.iter().collect();
    segs.sort_by(|a, b| (&a.utt, a.start).cmp(&(&b.utt, b.start)));
    let mut own = Vec::with_capacity(segs.len());
    for s in &segs {
        if s.label(&shift.attribute) != Some(shift.source.as_str()) {
            return Err(Error::Data(format!(
                "segment {}@{} is not labeled {}={}",
                s.utt, s.start, shift.attribute, shift.source
            )));
        }
        let v = s
            .label(&probe_b.attribute)
            .and_then(|v| probe_b.class_index(v))
            .ok_or_else(|| Error::Data(format!("segment {}@{} has no known {} label", s.utt, s.start, probe_b.attribute)))?;
        own.push(v);
    }
    let a = ckpt.arch();
    for s in &segs {
        ckpt.check_features(s.kind, s.n_frames, s.n_bins)?;
    }
    let x_db = segments_tensor(&segs)?;
    let x = Tensor::from_vec(x_db.shape(), ckpt.normalizer.apply(x_db.data()))?;
    let zero = vec![0.0; a.latent];
    let mut rng = Rng::new(0);
    let mut row = |v: &[f64]| -> Result<ShiftRow> {
        let y = modify(&ckpt.model, &x, v, DecodeMode::Mean, &mut rng)?;
        let y_db = Tensor::from_vec(y.shape(), ckpt.normalizer.invert(y.data()))?;
        let pa = probe_a.posteriors(&y_db)?;
        let pb = probe_b.posteriors(&y_db)?;
        let n = segs.len() as f64;
        Ok(ShiftRow {
            source: pa.iter().map(|p| p[si]).sum::<f64>() / n,
            target: pa.iter().map(|p| p[ti]).sum::<f64>() / n,
            fixed: pb.iter().zip(&own).map(|(p, &o)| p[o]).sum::<f64>() / n,
        })
    };
    let before = row(&zero)?;
    let after = row(&shift.v)?;
    Ok(ShiftReport {
        attribute: shift.attribute.clone(),
        source: shift.source.clone(),
        target: shift.target.clone(),
        fixed_attribute: probe_b.attribute.clone(),
        count: segs.len(),
        before,
        after,
    })
}
