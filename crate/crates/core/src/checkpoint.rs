//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `LSCK`, format version `u32`, architecture
//! header, normalizer, parameter records (name, shape, `f32` data), Adam
//! state, RNG state, batch-norm running statistics, and an optional
//! training-progress trailer used to resume a run.

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::dsp::FeatureKind;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Parameterized, Tensor};
use crate::rng::{Rng, RngState};
use crate::train::{EpochRow, TrainProgress};
use crate::vae::{Arch, ModelKind, Normalizer, SpeechModel};

pub const MAGIC: &[u8; 4] = b"LSCK";
pub const VERSION: u32 = 1;

/// A trained (or initialized) model with everything needed to use or resume it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SpeechModel<f32>,
    pub normalizer: Normalizer,
    pub adam: AdamState<f32>,
    pub rng: RngState,
    pub progress: Option<TrainProgress>,
}

impl Checkpoint {
    /// Freshly initialized model with zero optimizer state.
    pub fn init(arch: Arch, kind: ModelKind, normalizer: Normalizer, seed: u64) -> Result<Self> {
        if normalizer.n_bins() != arch.n_bins {
            return Err(Error::Shape(format!(
                "normalizer has {} bins, model expects {}",
                normalizer.n_bins(),
                arch.n_bins
            )));
        }
        let mut init_rng = Rng::for_purpose(seed, "init");
        let model = SpeechModel::new(arch, kind, &mut init_rng)?;
        let adam = AdamState::new(&model.params());
        let rng = Rng::for_purpose(seed, "train").state();
        Ok(Self { model, normalizer, adam, rng, progress: None })
    }

    pub fn arch(&self) -> &Arch {
        &self.model.arch
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);

        let a = &self.model.arch;
        w.u32(a.seg_len as u32);
        w.u32(a.n_bins as u32);
        w.u8(a.feature_kind.code());
        w.u8(match self.model.kind {
            ModelKind::Vae => 0,
            ModelKind::Ae => 1,
        });
        for c in a.conv {
            w.u32(c as u32);
        }
        w.u32(a.fc as u32);
        w.u32(a.latent as u32);
        match self.model.log_var_clamp {
            Some((lo, hi)) => {
                w.u8(1);
                w.f64(lo);
                w.f64(hi);
            }
            None => w.u8(0),
        }

        w.u32(self.normalizer.n_bins() as u32);
        w.f32s(&self.normalizer.mean);
        w.f32s(&self.normalizer.std);

        let params = self.model.params();
        w.u32(params.len() as u32);
        for p in &params {
            w.str(&p.name);
            w.u32(p.value.shape().len() as u32);
            for &d in p.value.shape() {
                w.u32(d as u32);
            }
            w.f32s(p.value.data());
        }

        w.u64(self.adam.t);
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            w.f32s(m);
            w.f32s(v);
        }

        w.bytes(&self.rng.seed);
        w.u64(self.rng.stream);
        w.u128(self.rng.word_pos);

        let bns = self.model.batchnorms();
        w.u32(bns.len() as u32);
        for (name, bn) in bns {
            w.str(name);
            w.u32(bn.channels() as u32);
            w.f32s(&bn.running_mean);
            w.f32s(&bn.running_var);
        }

        match &self.progress {
            None => w.u8(0),
            Some(p) => {
                w.u8(1);
                w.u32(p.epochs_done as u32);
                w.u32(p.best_epoch as u32);
                w.f64(p.best_bound);
                w.u32(p.rows.len() as u32);
                for r in &p.rows {
                    w.u32(r.epoch as u32);
                    for v in [r.train_bound, r.dev_bound, r.kl, r.recon] {
                        w.f64(v);
                    }
                }
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4)? != MAGIC {
            return Err(r.err("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(&format!("unsupported checkpoint version {version}")));
        }
        let seg_len = r.usize()?;
        let n_bins = r.usize()?;
        let feature_kind =
            FeatureKind::from_code(r.u8()?).ok_or_else(|| r.err("unknown feature kind code"))?;
        let kind = match r.u8()? {
            0 => ModelKind::Vae,
            1 => ModelKind::Ae,
            _ => return Err(r.err("unknown model kind code")),
        };
        let conv = [r.usize()?, r.usize()?, r.usize()?];
        let fc = r.usize()?;
        let latent = r.usize()?;
        let clamp = match r.u8()? {
            0 => None,
            1 => Some((r.f64()?, r.f64()?)),
            _ => return Err(r.err("bad clamp flag")),
        };
        let arch = Arch { seg_len, n_bins, feature_kind, conv, fc, latent };

        let nb = r.usize()?;
        let normalizer = Normalizer { mean: r.f32s(nb)?, std: r.f32s(nb)? };
        if nb != n_bins {
            return Err(r.err("normalizer width does not match architecture"));
        }

        let mut model = SpeechModel::<f32>::new(arch, kind, &mut Rng::new(0)).map_err(|e| r.err(&e.to_string()))?;
        model.log_var_clamp = clamp;
        let n_params = r.usize()?;
        let expected = model.params().len();
        if n_params != expected {
            return Err(r.err(&format!("{n_params} parameter records, architecture has {expected}")));
        }
        for p in model.params_mut() {
            let name = r.str()?;
            if name != p.name {
                return Err(r.err(&format!("expected parameter {}, found {name}", p.name)));
            }
            let ndim = r.usize()?;
            let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            if shape != p.value.shape() {
                return Err(r.err(&format!("parameter {name} has shape {shape:?}, expected {:?}", p.value.shape())));
            }
            let n = p.value.len();
            p.value = Tensor::from_vec(&shape, r.f32s(n)?)?;
        }

        let t = r.u64()?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for p in model.params() {
            m.push(r.f32s(p.value.len())?);
            v.push(r.f32s(p.value.len())?);
        }
        let adam = AdamState { t, m, v };

        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let rng = RngState { seed, stream: r.u64()?, word_pos: r.u128()? };

        let n_bn = r.usize()?;
        let mut bns = model.batchnorms_mut();
        if n_bn != bns.len() {
            return Err(r.err("batch-norm record count does not match architecture"));
        }
        for (name, bn) in bns.iter_mut() {
            let got = r.str()?;
            if got != *name {
                return Err(r.err(&format!("expected batch-norm {name}, found {got}")));
            }
            let c = r.usize()?;
            if c != bn.channels() {
                return Err(r.err(&format!("batch-norm {name} has {c} channels")));
            }
            bn.running_mean = r.f32s(c)?;
            bn.running_var = r.f32s(c)?;
        }
        drop(bns);

        let progress = match r.u8()? {
            0 => None,
            1 => {
                let epochs_done = r.usize()?;
                let best_epoch = r.usize()?;
                let best_bound = r.f64()?;
                let n = r.usize()?;
                let mut rows = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    let epoch = r.usize()?;
                    let (train_bound, dev_bound, kl, recon) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                    rows.push(EpochRow { epoch, train_bound, dev_bound, kl, recon, seconds: f64::NAN });
                }
                Some(TrainProgress { epochs_done, best_epoch, best_bound, rows })
            }
            _ => return Err(r.err("bad progress flag")),
        };
        if !r.at_end() {
            return Err(r.err("trailing bytes after checkpoint"));
        }
        Ok(Self { model, normalizer, adam, rng, progress })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Write via a temporary file and rename, so readers never see a
    /// partial checkpoint.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("lsck.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Reject features that do not match the model's `(kind, T, F)`.
    pub fn check_features(&self, kind: FeatureKind, seg_len: usize, n_bins: usize) -> Result<()> {
        let a = self.arch();
        if (kind, seg_len, n_bins) != (a.feature_kind, a.seg_len, a.n_bins) {
            return Err(Error::Shape(format!(
                "model expects {} segments of {}x{}, got {kind} {seg_len}x{n_bins}",
                a.feature_kind, a.seg_len, a.n_bins
            )));
        }
        Ok(())
    }
}
