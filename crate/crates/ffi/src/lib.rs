//! C interface to trained speech VAE checkpoints.
//!
//! A model is loaded into an opaque [`SvModel`] handle and released with
//! [`sv_model_free`]. Segments cross the boundary as contiguous row-major
//! `float` arrays of `n × frames × bins` dB values; latent codes as
//! `n × latent_dim`. Every fallible call returns an [`SvStatus`]; on failure
//! [`sv_last_error`] describes the problem.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use speech_vae::checkpoint::Checkpoint;
use speech_vae::dsp::FLOOR_DB;
use speech_vae::latent::{decode_latent, interpolate, modify, DecodeMode};
use speech_vae::nn::Tensor;
use speech_vae::rng::Rng;
use speech_vae::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Data = 6,
    NonFinite = 7,
    Panic = 8,
}

/// A loaded checkpoint.
pub struct SvModel {
    ckpt: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SvStatus {
    match e {
        Error::Shape(_) => SvStatus::Shape,
        Error::InvalidArgument(_) => SvStatus::InvalidArgument,
        Error::NonFinite { .. } => SvStatus::NonFinite,
        Error::Io { .. } => SvStatus::Io,
        Error::Format { .. } | Error::Wav(_) | Error::Json(_) => SvStatus::Format,
        Error::Data(_) => SvStatus::Data,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Run `f`, translating errors and panics into a status and the
/// thread's last error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SvStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("{what} is null"));
            SvStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            SvStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: the caller guarantees a non-null pointer is valid for reads.
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

fn slice<'a>(p: *const f32, len: usize, what: &'static str) -> Result<&'a [f32], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: the caller guarantees `len` readable floats at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a>(p: *mut f32, len: usize, what: &'static str) -> Result<&'a mut [f32], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: the caller guarantees `len` writable floats at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn require_count(n: usize) -> Result<(), Fail> {
    if n == 0 {
        return Err(Error::InvalidArgument("segment count must be at least 1".into()).into());
    }
    Ok(())
}

impl SvModel {
    fn item_len(&self) -> usize {
        let a = self.ckpt.arch();
        a.seg_len * a.n_bins
    }

    fn latent(&self) -> usize {
        self.ckpt.arch().latent
    }

    /// Raw dB input to a normalized model-space batch.
    fn input(&self, x_db: &[f32], n: usize) -> Result<Tensor<f32>, Error> {
        Tensor::from_vec(&self.ckpt.arch().input_shape(n), self.ckpt.normalizer.apply(x_db))
    }

    fn write_db(&self, y: &Tensor<f32>, out: &mut [f32]) {
        for (o, v) in out.iter_mut().zip(self.ckpt.normalizer.invert(y.data())) {
            *o = v.max(FLOOR_DB);
        }
    }
}

/// Message for the last failed call on this thread (empty after a
/// successful call). Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint file. On success `*out` receives a handle to release
/// with [`sv_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sv_model_load(path: *const c_char, out: *mut *mut SvModel) -> SvStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        // SAFETY: non-null and NUL-terminated per the contract.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
        let ckpt = Checkpoint::read(Path::new(path))?;
        // SAFETY: `out` is non-null and writable per the contract.
        unsafe { *out = Box::into_raw(Box::new(SvModel { ckpt })) };
        Ok(())
    })
}

/// Release a handle from [`sv_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sv_model_free(model: *mut SvModel) {
    if !model.is_null() {
        // SAFETY: created by `Box::into_raw` in `sv_model_load`.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Segment geometry and latent size of a model.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sv_model_shape(
    model: *const SvModel,
    frames: *mut usize,
    bins: *mut usize,
    latent_dim: *mut usize,
) -> SvStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let a = m.ckpt.arch();
        for (p, v, what) in [(frames, a.seg_len, "frames"), (bins, a.n_bins, "bins"), (latent_dim, a.latent, "latent_dim")] {
            if p.is_null() {
                return Err(Fail::Null(what));
            }
            // SAFETY: non-null and writable per the contract.
            unsafe { *p = v };
        }
        Ok(())
    })
}

/// Posterior means and log-variances of `n` segments.
///
/// # Safety
/// `x_db` holds `n·frames·bins` floats; `mean` and `log_var` each have room
/// for `n·latent_dim` floats.
#[no_mangle]
pub unsafe extern "C" fn sv_encode(
    model: *const SvModel,
    x_db: *const f32,
    n: usize,
    mean: *mut f32,
    log_var: *mut f32,
) -> SvStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        require_count(n)?;
        let x = slice(x_db, n * m.item_len(), "x_db")?;
        let mean = slice_mut(mean, n * m.latent(), "mean")?;
        let log_var = slice_mut(log_var, n * m.latent(), "log_var")?;
        let q = m.ckpt.model.encode(&m.input(x, n)?)?;
        mean.copy_from_slice(q.mean.data());
        log_var.copy_from_slice(q.log_var.data());
        Ok(())
    })
}

/// Decoder output means (dB, floored like extracted features) for `n`
/// latent codes.
///
/// # Safety
/// `z` holds `n·latent_dim` floats; `out_db` has room for `n·frames·bins`.
#[no_mangle]
pub unsafe extern "C" fn sv_decode(model: *const SvModel, z: *const f32, n: usize, out_db: *mut f32) -> SvStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        require_count(n)?;
        let z = slice(z, n * m.latent(), "z")?;
        let out = slice_mut(out_db, n * m.item_len(), "out_db")?;
        let zt = Tensor::from_vec(&[n, m.latent()], z.to_vec())?;
        let y = decode_latent(&m.ckpt.model, &zt, DecodeMode::Mean, &mut Rng::new(0))?;
        m.write_db(&y, out);
        Ok(())
    })
}

/// Encode `n` segments, add `shift` (length `latent_dim`) to each posterior
/// mean and decode the output means (dB).
///
/// # Safety
/// `x_db` and `out_db` hold `n·frames·bins` floats; `shift` holds
/// `latent_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sv_modify(
    model: *const SvModel,
    x_db: *const f32,
    n: usize,
    shift: *const f64,
    out_db: *mut f32,
) -> SvStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        require_count(n)?;
        let x = slice(x_db, n * m.item_len(), "x_db")?;
        if shift.is_null() {
            return Err(Fail::Null("shift"));
        }
        // SAFETY: non-null with `latent_dim` readable doubles per the contract.
        let shift = unsafe { std::slice::from_raw_parts(shift, m.latent()) };
        let out = slice_mut(out_db, n * m.item_len(), "out_db")?;
        let y = modify(&m.ckpt.model, &m.input(x, n)?, shift, DecodeMode::Mean, &mut Rng::new(0))?;
        m.write_db(&y, out);
        Ok(())
    })
}

/// `out = alpha·a + (1 − alpha)·b` for `dim`-dimensional codes, `alpha` in
/// `[0, 1]`.
///
/// # Safety
/// `a`, `b` and `out` each hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sv_interpolate(a: *const f64, b: *const f64, dim: usize, alpha: f64, out: *mut f64) -> SvStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(Fail::Null("latent code"));
        }
        // SAFETY: non-null with `dim` elements each per the contract.
        let (a, b, out) = unsafe {
            (
                std::slice::from_raw_parts(a, dim),
                std::slice::from_raw_parts(b, dim),
                std::slice::from_raw_parts_mut(out, dim),
            )
        };
        out.copy_from_slice(&interpolate(a, b, alpha)?);
        Ok(())
    })
}
