mod common;

use common::{small_arch, toy_segments};
use proptest::prelude::*;
use speech_vae::checkpoint::Checkpoint;
use speech_vae::dsp::synth::{synth_corpus, SynthConfig};
use speech_vae::dsp::{
    decode_features, encode_features, extract_corpus, read_features, write_features, ExtractConfig, FeatureKind,
    FrameMatrix, SegmentIndex, Split,
};
use speech_vae::train::{train, Dataset, TrainConfig};
use speech_vae::vae::{ModelKind, Normalizer};

fn trained_checkpoint(kind: ModelKind) -> Checkpoint {
    let segs = toy_segments(2, 3, 3, 8, 6, 1);
    let (tr, dv): (Vec<_>, Vec<_>) = segs.into_iter().partition(|s| !s.utt.ends_with("u02"));
    let arch = small_arch(8, 6, 3);
    let norm = Normalizer::fit(&tr).unwrap();
    let start = Checkpoint::init(arch.clone(), kind, norm.clone(), 3).unwrap();
    let cfg = TrainConfig { batch_size: 4, max_epochs: 2, ..Default::default() };
    let d = |s| Dataset::new(s, &norm, &arch).unwrap();
    train(start, None, &d(&tr), &d(&dv), &cfg, None).unwrap().last
}

proptest! {
    #[test]
    fn feature_bytes_round_trip(frames in 0usize..6, seed in any::<u64>()) {
        let mut rng = speech_vae::rng::Rng::new(seed);
        let values = (0..frames * 80).map(|_| (rng.normal() * 30.0) as f32).collect();
        let m = FrameMatrix::new(values, frames, FeatureKind::FBank).unwrap();
        let bytes = encode_features(&m);
        let back = decode_features(&bytes, "x".as_ref()).unwrap();
        prop_assert_eq!(&back.values, &m.values);
        prop_assert_eq!(encode_features(&back), bytes);
    }
}

#[test]
fn feature_files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let m = FrameMatrix::new((0..3 * 257).map(|i| i as f32 * 0.37 - 20.0).collect(), 3, FeatureKind::Spec).unwrap();
    let (a, b) = (dir.path().join("a.lsf"), dir.path().join("b.lsf"));
    write_features(&a, &m).unwrap();
    write_features(&b, &read_features(&a).unwrap()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn feature_header_must_match_kind() {
    let m = FrameMatrix::new(vec![0.0; 80], 1, FeatureKind::FBank).unwrap();
    let mut bytes = encode_features(&m);
    bytes[12] = FeatureKind::Spec.code();
    assert!(decode_features(&bytes, "x".as_ref()).is_err());
}

#[test]
fn checkpoints_round_trip_for_both_model_kinds() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::Vae, ModelKind::Ae] {
        let c = trained_checkpoint(kind);
        let (a, b) = (dir.path().join("a.lsck"), dir.path().join("b.lsck"));
        c.write(&a).unwrap();
        let back = Checkpoint::read(&a).unwrap();
        back.write(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(back.model.kind, kind);
        assert_eq!(back.progress.as_ref().unwrap().epochs_done, 2);
        assert!(!dir.path().join("a.lsck.tmp").exists());
    }
}

#[test]
fn restored_checkpoint_encodes_identically() {
    let c = trained_checkpoint(ModelKind::Vae);
    let back = Checkpoint::from_bytes(&c.to_bytes(), "c".as_ref()).unwrap();
    let mut rng = speech_vae::rng::Rng::new(0);
    let x = speech_vae::nn::Tensor::from_fn(&c.arch().input_shape(3), |_| rng.normal() as f32);
    assert_eq!(c.model.encode(&x).unwrap().mean.data(), back.model.encode(&x).unwrap().mean.data());
    assert_eq!(c.model.decode(&c.model.encode(&x).unwrap().mean).unwrap().log_var.data(),
        back.model.decode(&back.model.encode(&x).unwrap().mean).unwrap().log_var.data());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = trained_checkpoint(ModelKind::Vae).to_bytes();
    let p = "c".as_ref();
    let mut extra = bytes.clone();
    extra.push(7);
    assert!(Checkpoint::from_bytes(&extra, p).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&magic, p).is_err());
    let mut version = bytes.clone();
    version[4] = 99;
    assert!(Checkpoint::from_bytes(&version, p).is_err());
}

#[test]
fn checkpoint_rejects_mismatched_features() {
    let c = trained_checkpoint(ModelKind::Vae);
    assert!(c.check_features(FeatureKind::FBank, 8, 6).is_ok());
    assert!(c.check_features(FeatureKind::FBank, 20, 6).is_err());
    assert!(c.check_features(FeatureKind::Spec, 8, 6).is_err());
}

#[test]
fn extraction_writes_an_index_that_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(&SynthConfig::new(3, 3, 2, 4), &dir.path().join("corpus")).unwrap();
    let cfg = ExtractConfig { feature_kind: FeatureKind::FBank, seg_len: 20, hop: 10 };
    let out = dir.path().join("feats");
    let idx = extract_corpus(&manifest, &cfg, &out).unwrap();
    let reread = SegmentIndex::read(&out.join("segments.jsonl")).unwrap();
    assert_eq!(reread.records, idx.records);

    let all = reread.load(None).unwrap();
    assert_eq!(all.len(), idx.records.len());
    assert!(all.iter().all(|s| s.n_frames == 20 && s.n_bins == 80 && s.values.iter().all(|&v| v >= -20.0)));
    let train_n = reread.load(Some(Split::Train)).unwrap().len();
    let dev_n = reread.load(Some(Split::Dev)).unwrap().len();
    assert!(train_n > 0 && dev_n > 0 && train_n + dev_n < all.len());
    for w in all.windows(2).filter(|w| w[0].utt == w[1].utt) {
        assert_eq!(w[1].start - w[0].start, 10);
    }

    // Repeated extraction writes identical files.
    let again = extract_corpus(&manifest, &cfg, &dir.path().join("feats2")).unwrap();
    assert_eq!(again.records, idx.records);
    for r in &idx.records {
        assert_eq!(std::fs::read(out.join(&r.feats)).unwrap(), std::fs::read(dir.path().join("feats2").join(&r.feats)).unwrap());
    }
}
