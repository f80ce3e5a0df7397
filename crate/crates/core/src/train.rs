//! Minibatch training of the negative lower bound with Adam, dev-bound early
//! stopping, and bitwise-resumable state.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::dsp::FeatureSegment;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Parameterized, Scalar, Tensor};
use crate::rng::{derive_seed, Rng};
use crate::vae::{Arch, Normalizer, SpeechModel};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
    pub patience: usize,
    pub seed: u64,
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            batch_size: 128,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            l2: a.l2,
            patience: 10,
            seed: 0,
            max_epochs: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 (batch norm)");
        }
        if !(self.lr > 0.0 && self.eps > 0.0 && self.l2 >= 0.0) {
            return bad("lr and eps must be positive, l2 non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return bad("patience and max_epochs must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, l2: self.l2 }
    }
}

/// Outcome of one observation of the stopping rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Stop once the monitored value has not strictly increased for `patience`
/// consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_epoch: usize,
    pub best: f64,
}

impl EarlyStopping {
    /// Start from the value observed at `epoch` (typically the
    /// initialization evaluation at epoch 0).
    pub fn new(patience: usize, epoch: usize, value: f64) -> Self {
        Self { patience, best_epoch: epoch, best: value }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        let improved = value > self.best;
        if improved {
            self.best = value;
            self.best_epoch = epoch;
        }
        StopDecision { improved, stop: epoch - self.best_epoch >= self.patience }
    }
}

/// One row of the training log. Bounds are mean nats per segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean minibatch lower bound during the epoch (NaN at epoch 0).
    pub train_bound: f64,
    pub dev_bound: f64,
    /// Mean KL and reconstruction terms of the training minibatches.
    pub kl: f64,
    pub recon: f64,
    /// Wall time of the epoch; NaN for rows restored from a checkpoint.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,train_bound,dev_bound,kl,recon,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{},{:.3}", r.epoch, r.train_bound, r.dev_bound, r.kl, r.recon, r.seconds).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn best_dev_bound(&self) -> Option<f64> {
        self.rows.iter().find(|r| r.epoch == self.best_epoch).map(|r| r.dev_bound)
    }
}

/// Where a run stands, stored in the checkpoint so it can be resumed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainProgress {
    pub epochs_done: usize,
    pub best_epoch: usize,
    pub best_bound: f64,
    pub rows: Vec<EpochRow>,
}

/// Normalized segments packed contiguously, ready for batching.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub values: Vec<f32>,
    pub seg_len: usize,
    pub n_bins: usize,
}

impl Dataset {
    pub fn new(segments: &[FeatureSegment], normalizer: &Normalizer, arch: &Arch) -> Result<Self> {
        let mut values = Vec::with_capacity(segments.len() * arch.seg_len * arch.n_bins);
        for s in segments {
            if (s.kind, s.n_frames, s.n_bins) != (arch.feature_kind, arch.seg_len, arch.n_bins) {
                return Err(Error::Shape(format!(
                    "segment {}@{} is {} {}x{}, model expects {} {}x{}",
                    s.utt, s.start, s.kind, s.n_frames, s.n_bins, arch.feature_kind, arch.seg_len, arch.n_bins
                )));
            }
            values.extend(normalizer.apply(&s.values));
        }
        Ok(Self { values, seg_len: arch.seg_len, n_bins: arch.n_bins })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.item_len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn item_len(&self) -> usize {
        self.seg_len * self.n_bins
    }

    pub fn item(&self, i: usize) -> &[f32] {
        &self.values[i * self.item_len()..(i + 1) * self.item_len()]
    }

    /// Items `idx` as a `(B, 1, T, F)` tensor.
    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> Tensor<T> {
        let n = self.item_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend(self.item(i).iter().map(|&v| T::lit(v as f64)));
        }
        Tensor::from_vec(&[idx.len(), 1, self.seg_len, self.n_bins], data).expect("consistent batch shape")
    }
}

/// Split `n` items into consecutive batches of `size`; a trailing batch of
/// one is merged into the one before it.
pub fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size.max(1)).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Noise used when evaluating the bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalNoise {
    /// Item `i` gets its own stream of a generator keyed by the seed, so the
    /// value does not depend on batching.
    Seeded(u64),
    /// `ε = 0`: the deterministic posterior-mean path.
    Zero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundReport {
    pub elbo: f64,
    pub kl: f64,
    pub recon: f64,
    pub n: usize,
}

const EVAL_BATCH: usize = 256;

/// Mean lower bound over `data` in inference mode (one latent sample per item).
pub fn evaluate_bound<T: Scalar>(model: &SpeechModel<T>, data: &Dataset, noise: EvalNoise) -> Result<BoundReport> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate the bound on an empty split".into()));
    }
    let latent = model.arch.latent;
    let mut acc = BoundReport { n: data.len(), ..Default::default() };
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = data.batch::<T>(chunk);
        let eps = match noise {
            EvalNoise::Zero => Tensor::zeros(&[chunk.len(), latent]),
            EvalNoise::Seeded(seed) => {
                let mut e = Vec::with_capacity(chunk.len() * latent);
                for &i in chunk {
                    let mut rng = Rng::with_stream(seed, i as u64);
                    e.extend((0..latent).map(|_| T::lit(rng.normal())));
                }
                Tensor::from_vec(&[chunk.len(), latent], e)?
            }
        };
        for p in model.elbo(&x, &[eps])? {
            acc.elbo += p.elbo;
            acc.kl += p.kl;
            acc.recon += p.recon;
        }
    }
    let n = data.len() as f64;
    acc.elbo /= n;
    acc.kl /= n;
    acc.recon /= n;
    if !acc.elbo.is_finite() {
        return Err(Error::non_finite("evaluated lower bound"));
    }
    Ok(acc)
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint from the epoch with the best dev bound.
    pub best: Checkpoint,
    /// State after the final epoch, resumable.
    pub last: Checkpoint,
    pub log: TrainLog,
    pub stopped_early: bool,
}

/// Called after every epoch with the current and best checkpoints and the
/// new log row.
pub type EpochHook<'a> = dyn FnMut(&Checkpoint, &Checkpoint, &TrainLog) -> Result<()> + 'a;

fn dev_seed(cfg: &TrainConfig) -> u64 {
    derive_seed(cfg.seed, "dev-bound")
}

/// Train from `start`. If `start` carries progress from an earlier run, the
/// run resumes from it and `best` must hold that run's best checkpoint.
pub fn train(
    start: Checkpoint,
    best: Option<Checkpoint>,
    train_data: &Dataset,
    dev_data: &Dataset,
    cfg: &TrainConfig,
    mut hook: Option<&mut EpochHook<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.len() < 2 {
        return Err(Error::Data("training needs at least 2 train segments (batch norm)".into()));
    }
    if dev_data.is_empty() {
        return Err(Error::Data("early stopping needs a non-empty dev split".into()));
    }
    let mut cur = start;
    let adam = cfg.adam();
    let dev_seed = dev_seed(cfg);

    let (mut log, mut stopper, mut best) = match cur.progress.clone() {
        Some(p) => {
            let best = best.ok_or_else(|| {
                Error::InvalidArgument("resuming needs the best checkpoint of the interrupted run".into())
            })?;
            let stopper = EarlyStopping { patience: cfg.patience, best_epoch: p.best_epoch, best: p.best_bound };
            (TrainLog { rows: p.rows, best_epoch: p.best_epoch }, stopper, best)
        }
        None => {
            let t0 = Instant::now();
            let dev = evaluate_bound(&cur.model, dev_data, EvalNoise::Seeded(dev_seed))?;
            let row = EpochRow {
                epoch: 0,
                train_bound: f64::NAN,
                dev_bound: dev.elbo,
                kl: f64::NAN,
                recon: f64::NAN,
                seconds: t0.elapsed().as_secs_f64(),
            };
            cur.progress = Some(TrainProgress { epochs_done: 0, best_epoch: 0, best_bound: dev.elbo, rows: vec![row] });
            let log = TrainLog { rows: vec![row], best_epoch: 0 };
            (log, EarlyStopping::new(cfg.patience, 0, dev.elbo), cur.clone())
        }
    };
    let mut epoch = cur.progress.as_ref().map_or(0, |p| p.epochs_done);
    if epoch == 0 {
        if let Some(h) = hook.as_mut() {
            h(&cur, &best, &log)?;
        }
    }
    let mut stopped_early = epoch > stopper.best_epoch && epoch - stopper.best_epoch >= cfg.patience;

    while !stopped_early && epoch < cfg.max_epochs {
        epoch += 1;
        let t0 = Instant::now();
        let mut rng = Rng::from_state(&cur.rng);
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        rng.shuffle(&mut order);
        let (mut sum_loss, mut sum_kl, mut sum_recon) = (0.0, 0.0, 0.0);
        for r in batch_ranges(order.len(), cfg.batch_size) {
            let idx = &order[r];
            let x = train_data.batch::<f32>(idx);
            let eps = cur.model.draw_eps(idx.len(), &mut rng);
            cur.model.zero_grad();
            let rep = cur.model.train_loss(&x, &eps, true).map_err(|e| match e {
                Error::NonFinite { context } => Error::non_finite(format!(
                    "{context} in epoch {epoch}; last good epoch {}",
                    epoch - 1
                )),
                other => other,
            })?;
            let b = idx.len() as f64;
            sum_loss += rep.loss * b;
            sum_kl += rep.kl * b;
            sum_recon += rep.recon * b;
            let mut params = cur.model.params_mut();
            cur.adam.step(&adam, &mut params)?;
        }
        cur.rng = rng.state();
        let n = train_data.len() as f64;
        let dev = evaluate_bound(&cur.model, dev_data, EvalNoise::Seeded(dev_seed)).map_err(|e| match e {
            Error::NonFinite { context } => {
                Error::non_finite(format!("{context} after epoch {epoch}; last good epoch {}", epoch - 1))
            }
            other => other,
        })?;
        let row = EpochRow {
            epoch,
            train_bound: -sum_loss / n,
            dev_bound: dev.elbo,
            kl: sum_kl / n,
            recon: sum_recon / n,
            seconds: t0.elapsed().as_secs_f64(),
        };
        let decision = stopper.observe(epoch, dev.elbo);
        log.rows.push(row);
        log.best_epoch = stopper.best_epoch;
        cur.progress = Some(TrainProgress {
            epochs_done: epoch,
            best_epoch: stopper.best_epoch,
            best_bound: stopper.best,
            rows: log.rows.clone(),
        });
        if decision.improved {
            best = cur.clone();
        }
        stopped_early = decision.stop;
        if let Some(h) = hook.as_mut() {
            h(&cur, &best, &log)?;
        }
    }
    Ok(TrainOutcome { best, last: cur, log, stopped_early })
}
