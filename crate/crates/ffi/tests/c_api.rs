use std::ffi::{CStr, CString};
use std::ptr;

use speech_vae::checkpoint::Checkpoint;
use speech_vae::dsp::FeatureKind;
use speech_vae::latent::{decode_latent, modify, DecodeMode};
use speech_vae::nn::Tensor;
use speech_vae::rng::Rng;
use speech_vae::vae::{Arch, ModelKind, Normalizer};
use speech_vae_ffi::*;

const T: usize = 8;
const F: usize = 6;
const D: usize = 3;

struct Fixture {
    _dir: tempfile::TempDir,
    path: CString,
    ckpt: Checkpoint,
}

fn fixture() -> Fixture {
    let arch = Arch { seg_len: T, n_bins: F, feature_kind: FeatureKind::FBank, conv: [4, 8, 8], fc: 16, latent: D };
    let norm = Normalizer { mean: (0..F).map(|k| 20.0 + k as f32).collect(), std: vec![8.0; F] };
    let ckpt = Checkpoint::init(arch, ModelKind::Vae, norm, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.lsck");
    ckpt.write(&p).unwrap();
    Fixture { path: CString::new(p.to_str().unwrap()).unwrap(), ckpt, _dir: dir }
}

fn load(f: &Fixture) -> *mut SvModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sv_model_load(f.path.as_ptr(), &mut m) }, SvStatus::Ok);
    assert!(!m.is_null());
    m
}

fn segments_db(n: usize) -> Vec<f32> {
    let mut rng = Rng::new(9);
    (0..n * T * F).map(|_| (25.0 + 10.0 * rng.normal()) as f32).collect()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sv_last_error()) }.to_str().unwrap().to_owned()
}

#[test]
fn shape_and_version() {
    let f = fixture();
    let m = load(&f);
    let (mut t, mut b, mut d) = (0, 0, 0);
    assert_eq!(unsafe { sv_model_shape(m, &mut t, &mut b, &mut d) }, SvStatus::Ok);
    assert_eq!((t, b, d), (T, F, D));
    let v = unsafe { CStr::from_ptr(sv_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    unsafe { sv_model_free(m) };
}

#[test]
fn encode_decode_and_modify_match_the_library() {
    let f = fixture();
    let m = load(&f);
    let n = 3;
    let x = segments_db(n);
    let xt = Tensor::from_vec(&f.ckpt.arch().input_shape(n), f.ckpt.normalizer.apply(&x)).unwrap();
    let q = f.ckpt.model.encode(&xt).unwrap();

    let (mut mean, mut log_var) = (vec![0f32; n * D], vec![0f32; n * D]);
    assert_eq!(unsafe { sv_encode(m, x.as_ptr(), n, mean.as_mut_ptr(), log_var.as_mut_ptr()) }, SvStatus::Ok);
    assert_eq!(mean, q.mean.data());
    assert_eq!(log_var, q.log_var.data());

    let to_db = |y: &Tensor<f32>| -> Vec<f32> { f.ckpt.normalizer.invert(y.data()).into_iter().map(|v| v.max(-20.0)).collect() };
    let mut out = vec![0f32; n * T * F];
    assert_eq!(unsafe { sv_decode(m, mean.as_ptr(), n, out.as_mut_ptr()) }, SvStatus::Ok);
    let want = decode_latent(&f.ckpt.model, &q.mean, DecodeMode::Mean, &mut Rng::new(0)).unwrap();
    assert_eq!(out, to_db(&want));

    let shift = [0.5, -1.0, 2.0];
    assert_eq!(unsafe { sv_modify(m, x.as_ptr(), n, shift.as_ptr(), out.as_mut_ptr()) }, SvStatus::Ok);
    let want = modify(&f.ckpt.model, &xt, &shift, DecodeMode::Mean, &mut Rng::new(0)).unwrap();
    assert_eq!(out, to_db(&want));
    unsafe { sv_model_free(m) };
}

#[test]
fn interpolation_endpoints_and_range() {
    let (a, b) = ([1.0, 2.0], [-3.0, 0.5]);
    let mut out = [0.0; 2];
    assert_eq!(unsafe { sv_interpolate(a.as_ptr(), b.as_ptr(), 2, 1.0, out.as_mut_ptr()) }, SvStatus::Ok);
    assert_eq!(out, a);
    assert_eq!(unsafe { sv_interpolate(a.as_ptr(), b.as_ptr(), 2, 0.25, out.as_mut_ptr()) }, SvStatus::Ok);
    assert_eq!(out, [0.25 - 2.25, 0.5 + 0.375]);
    assert_eq!(unsafe { sv_interpolate(a.as_ptr(), b.as_ptr(), 2, 1.5, out.as_mut_ptr()) }, SvStatus::InvalidArgument);
    assert!(last_error().contains("outside [0, 1]"));
}

#[test]
fn null_pointers_are_reported() {
    let f = fixture();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sv_model_load(ptr::null(), &mut m) }, SvStatus::NullPointer);
    assert_eq!(last_error(), "path is null");
    assert_eq!(unsafe { sv_model_load(f.path.as_ptr(), ptr::null_mut()) }, SvStatus::NullPointer);

    let mut buf = [0f32; D];
    assert_eq!(unsafe { sv_encode(ptr::null(), buf.as_ptr(), 1, buf.as_mut_ptr(), buf.as_mut_ptr()) }, SvStatus::NullPointer);
    assert_eq!(last_error(), "model is null");

    let m = load(&f);
    assert_eq!(last_error(), "");
    let x = segments_db(1);
    assert_eq!(unsafe { sv_encode(m, x.as_ptr(), 1, ptr::null_mut(), buf.as_mut_ptr()) }, SvStatus::NullPointer);
    assert_eq!(unsafe { sv_modify(m, x.as_ptr(), 1, ptr::null(), buf.as_mut_ptr()) }, SvStatus::NullPointer);
    assert_eq!(unsafe { sv_encode(m, x.as_ptr(), 0, buf.as_mut_ptr(), buf.as_mut_ptr()) }, SvStatus::InvalidArgument);
    unsafe {
        sv_model_free(m);
        sv_model_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.lsck");
    let c = CString::new(missing.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sv_model_load(c.as_ptr(), &mut m) }, SvStatus::Io);
    assert!(m.is_null());
    assert!(last_error().contains("missing.lsck"));

    let junk = dir.path().join("junk.lsck");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let c = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sv_model_load(c.as_ptr(), &mut m) }, SvStatus::Format);
    assert!(last_error().contains("junk.lsck"));
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/speech_vae.h")).unwrap();
    for name in [
        "SV_STATUS_OK",
        "SV_STATUS_PANIC",
        "typedef struct SvModel SvModel",
        "sv_model_load",
        "sv_model_free",
        "sv_model_shape",
        "sv_encode",
        "sv_decode",
        "sv_modify",
        "sv_interpolate",
        "sv_last_error",
        "sv_version",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
}
