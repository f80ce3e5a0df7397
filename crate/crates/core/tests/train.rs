mod common;

use common::{small_arch, toy_segments};
use speech_vae::checkpoint::Checkpoint;
use speech_vae::dsp::FeatureSegment;
use speech_vae::train::{
    batch_ranges, evaluate_bound, train, Dataset, EarlyStopping, EvalNoise, TrainConfig, TrainLog,
};
use speech_vae::vae::{ModelKind, Normalizer};

fn split(segs: Vec<FeatureSegment>) -> (Vec<FeatureSegment>, Vec<FeatureSegment>) {
    segs.into_iter().partition(|s| !s.utt.ends_with("u03"))
}

struct Setup {
    start: Checkpoint,
    train: Dataset,
    dev: Dataset,
}

fn setup(seed: u64) -> Setup {
    let (tr, dv) = split(toy_segments(3, 4, 4, 8, 6, 11));
    let arch = small_arch(8, 6, 3);
    let norm = Normalizer::fit(&tr).unwrap();
    Setup {
        train: Dataset::new(&tr, &norm, &arch).unwrap(),
        dev: Dataset::new(&dv, &norm, &arch).unwrap(),
        start: Checkpoint::init(arch, ModelKind::Vae, norm, seed).unwrap(),
    }
}

fn cfg(max_epochs: usize) -> TrainConfig {
    TrainConfig { batch_size: 8, max_epochs, seed: 5, patience: 50, lr: 3e-3, ..Default::default() }
}

fn without_seconds(log: &TrainLog) -> Vec<[u64; 5]> {
    log.rows
        .iter()
        .map(|r| {
            [r.epoch as u64, r.train_bound.to_bits(), r.dev_bound.to_bits(), r.kl.to_bits(), r.recon.to_bits()]
        })
        .collect()
}

#[test]
fn plateau_from_epoch_three_stops_after_patience() {
    let mut es = EarlyStopping::new(10, 0, -100.0);
    let mut stopped_at = None;
    for epoch in 1..=40 {
        let v = if epoch <= 3 { -100.0 + 10.0 * epoch as f64 } else { -70.0 };
        if es.observe(epoch, v).stop {
            stopped_at = Some(epoch);
            break;
        }
    }
    assert_eq!(stopped_at, Some(13));
    assert_eq!(es.best_epoch, 3);
}

#[test]
fn equal_values_do_not_count_as_improvement() {
    let mut es = EarlyStopping::new(2, 0, 1.0);
    assert!(!es.observe(1, 1.0).improved);
    assert!(es.observe(2, 1.0).stop);
}

#[test]
fn strictly_improving_never_stops() {
    let mut es = EarlyStopping::new(1, 0, 0.0);
    for epoch in 1..500 {
        let d = es.observe(epoch, epoch as f64 * 1e-9);
        assert!(d.improved && !d.stop);
    }
}

#[test]
fn trailing_singleton_batch_is_merged() {
    assert_eq!(batch_ranges(9, 4), vec![0..4, 4..9]);
    assert_eq!(batch_ranges(10, 4), vec![0..4, 4..8, 8..10]);
    assert_eq!(batch_ranges(1, 4), vec![0..1]);
    let covered: usize = batch_ranges(257, 128).iter().map(|r| r.len()).sum();
    assert_eq!(covered, 257);
}

#[test]
fn seeded_bound_is_repeatable_and_zero_noise_splits_exactly() {
    let s = setup(1);
    let a = evaluate_bound(&s.start.model, &s.dev, EvalNoise::Seeded(9)).unwrap();
    let b = evaluate_bound(&s.start.model, &s.dev, EvalNoise::Seeded(9)).unwrap();
    assert_eq!(a.elbo.to_bits(), b.elbo.to_bits());
    let z = evaluate_bound(&s.start.model, &s.dev, EvalNoise::Zero).unwrap();
    assert!((z.elbo - (z.recon - z.kl)).abs() < 1e-9 * z.elbo.abs().max(1.0));
}

#[test]
fn training_improves_the_dev_bound_and_logs_every_epoch() {
    let s = setup(2);
    let out = train(s.start, None, &s.train, &s.dev, &cfg(6), None).unwrap();
    assert_eq!(out.log.rows.len(), 7);
    assert!(out.log.rows[0].train_bound.is_nan());
    assert!(out.log.best_dev_bound().unwrap() > out.log.rows[0].dev_bound);
    assert!(!out.stopped_early);
    let csv = out.log.to_csv();
    assert!(csv.starts_with(TrainLog::CSV_HEADER));
    assert_eq!(csv.lines().count(), 8);
    let best = out.best.progress.unwrap();
    assert_eq!(best.best_epoch, out.log.best_epoch);
}

#[test]
fn same_seed_gives_identical_runs() {
    let run = || {
        let s = setup(3);
        train(s.start, None, &s.train, &s.dev, &cfg(3), None).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(without_seconds(&a.log), without_seconds(&b.log));
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
}

#[test]
fn resumed_run_matches_uninterrupted_run_bitwise() {
    let s = setup(4);
    let full = train(s.start.clone(), None, &s.train, &s.dev, &cfg(5), None).unwrap();

    let first = train(s.start, None, &s.train, &s.dev, &cfg(2), None).unwrap();
    let last = Checkpoint::from_bytes(&first.last.to_bytes(), "last".as_ref()).unwrap();
    let best = Checkpoint::from_bytes(&first.best.to_bytes(), "best".as_ref()).unwrap();
    let resumed = train(last, Some(best), &s.train, &s.dev, &cfg(5), None).unwrap();

    assert_eq!(without_seconds(&full.log), without_seconds(&resumed.log));
    assert_eq!(full.last.to_bytes(), resumed.last.to_bytes());
    assert_eq!(full.best.to_bytes(), resumed.best.to_bytes());
}

#[test]
fn resuming_without_the_best_checkpoint_is_an_error() {
    let s = setup(5);
    let first = train(s.start, None, &s.train, &s.dev, &cfg(1), None).unwrap();
    assert!(train(first.last, None, &s.train, &s.dev, &cfg(3), None).is_err());
}

#[test]
fn early_stopping_ends_training_on_a_plateau() {
    let s = setup(6);
    // A vanishing learning rate keeps the dev bound flat.
    let c = TrainConfig { lr: 1e-30, l2: 0.0, patience: 2, ..cfg(50) };
    let out = train(s.start, None, &s.train, &s.dev, &c, None).unwrap();
    assert!(out.stopped_early);
    let last = out.log.rows.last().unwrap().epoch;
    assert_eq!(last - out.log.best_epoch, 2);
}

#[test]
fn empty_dev_split_is_rejected() {
    let s = setup(7);
    let empty = Dataset { values: vec![], seg_len: 8, n_bins: 6 };
    assert!(train(s.start, None, &s.train, &empty, &cfg(1), None).is_err());
}

#[test]
fn hook_sees_every_epoch() {
    let s = setup(8);
    let mut seen = Vec::new();
    let mut hook = |_: &Checkpoint, _: &Checkpoint, log: &TrainLog| {
        seen.push(log.rows.len());
        Ok(())
    };
    train(s.start, None, &s.train, &s.dev, &cfg(3), Some(&mut hook)).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    let c: TrainConfig = serde_json::from_str(r#"{"lr": 0.01}"#).unwrap();
    assert_eq!(c.batch_size, 128);
    assert!(TrainConfig { batch_size: 1, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
}
