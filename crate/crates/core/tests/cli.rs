use std::path::Path;
use std::process::{Command, Output};

use speech_vae::checkpoint::Checkpoint;
use speech_vae::dsp::{read_features, FeatureKind};
use speech_vae::latent::{AttributeTable, LatentShift};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speech-vae")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &["--conv", "4,8,8", "--fc", "16"];

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["train"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["extract", "--manifest", "/nonexistent/m.jsonl", "--out", "/tmp/x"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.lsck");
    std::fs::write(&bad, b"garbage").unwrap();
    let out = run(&["sample", "--model", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.lsck"));
}

#[test]
fn key_value_config_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("train.cfg");
    std::fs::write(&p, "# settings\nlr = 0.002\npatience=4\n").unwrap();
    let c = speech_vae::cli::read_train_config(&p).unwrap();
    assert_eq!((c.lr, c.patience, c.batch_size), (0.002, 4, 128));
    std::fs::write(&p, "lr: 3\n").unwrap();
    assert!(speech_vae::cli::read_train_config(&p).is_err());
    std::fs::write(&p, "{\"seed\": 9}").unwrap();
    assert_eq!(speech_vae::cli::read_train_config(&p).unwrap().seed, 9);
}

#[test]
fn pgm_maps_the_db_range_with_low_bins_at_the_bottom() {
    // Two frames, three bins.
    let v = [-20.0, 30.0, 80.0, -50.0, 30.0, 200.0];
    let img = speech_vae::cli::pgm(&v, 2, 3);
    let header = b"P5\n2 3\n255\n";
    assert_eq!(&img[..header.len()], header);
    assert_eq!(&img[header.len()..], &[255, 255, 128, 128, 0, 0]);
}

#[test]
fn full_pipeline_through_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (corpus, feats, model) = (d.join("corpus"), d.join("feats"), d.join("model"));
    ok(&["synth-data", "--out", s(&corpus), "--speakers", "6", "--phones", "3", "--utts-per-speaker", "5", "--seed", "2"]);
    ok(&["extract", "--manifest", s(&corpus.join("corpus.jsonl")), "--out", s(&feats), "--seg-len", "20"]);
    let segments = feats.join("segments.jsonl");
    assert!(feats.join("config.json").exists());

    let mut train = vec!["train", "--segments", s(&segments), "--out", s(&model), "--latent", "4"];
    train.extend_from_slice(SMALL);
    train.extend_from_slice(&["--max-epochs", "2", "--batch-size", "32", "--seed", "1"]);
    ok(&train);
    for f in ["best.lsck", "last.lsck", "train_log.csv", "config.json"] {
        assert!(model.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(model.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(model.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["config"]["train"]["max_epochs"], 2);
    assert_eq!(cfg["config"]["train"]["patience"], 10);

    // Resume continues the same run.
    let mut resume = train.clone();
    let at = resume.iter().position(|a| *a == "--max-epochs").unwrap();
    resume[at + 1] = "3";
    resume.push("--resume");
    ok(&resume);
    assert_eq!(Checkpoint::read(&model.join("last.lsck")).unwrap().progress.unwrap().epochs_done, 3);

    let best = model.join("best.lsck");
    let seg_args = ["--segments", s(&segments)];
    let enc = d.join("enc.csv");
    ok(&[&["encode", "--model", s(&best), "--out", s(&enc)][..], &seg_args, &["--split", "dev"]].concat());
    let text = std::fs::read_to_string(&enc).unwrap();
    assert!(text.starts_with("utt,start,speaker,phone,mu0,mu1,mu2,mu3,logvar0"));

    let dec = d.join("dec");
    ok(&["decode", "--model", s(&best), "--latent", s(&enc), "--out", s(&dec)]);
    let m = read_features(&dec.join("decoded.lsf")).unwrap();
    assert_eq!(m.kind, FeatureKind::FBank);
    assert_eq!(m.n_frames, 20 * (text.lines().count() - 1));
    assert!(m.values.iter().all(|&v| v >= -20.0));
    assert!(dec.join("decoded_000.pgm").exists());

    let table = d.join("table.json");
    let imgs = d.join("attr_img");
    ok(&[&["attr", "--model", s(&best), "--out", s(&table), "--role-period", "5", "--images", s(&imgs)][..], &seg_args].concat());
    let t = AttributeTable::read(&table).unwrap();
    assert_eq!(t.values("speaker").len(), 4);
    assert!(imgs.join("speaker_spk00.pgm").exists() && imgs.join("speaker_spk00.avg.pgm").exists());

    let spk = t.values("speaker");
    let shift = d.join("shift.json");
    ok(&["shift", "--table", s(&table), "--attribute", "speaker", "--source", spk[0], "--target", spk[1], "--out", s(&shift)]);
    assert_eq!(LatentShift::read(&shift).unwrap().v.len(), 4);

    let modd = d.join("mod");
    ok(&[&["modify", "--model", s(&best), "--shift", s(&shift), "--out", s(&modd), "--role", "held", "--role-period", "5"][..], &seg_args].concat());
    for f in ["modified.lsf", "reconstructed.lsf", "segments.csv", "000_modified.pgm", "config.json"] {
        assert!(modd.join(f).exists(), "{f}");
    }

    let first = text.lines().nth(1).unwrap().split(',').take(2).collect::<Vec<_>>().join("@");
    let second = text.lines().nth(2).unwrap().split(',').take(2).collect::<Vec<_>>().join("@");
    let interp = d.join("interp");
    ok(&[&["interp", "--model", s(&best), "--a", &first, "--b", &second, "--split", "dev", "--out", s(&interp)][..], &seg_args].concat());
    assert_eq!(std::fs::read_to_string(interp.join("alphas.csv")).unwrap(), "index,alpha\n0,0\n1,0.25\n2,0.5\n3,0.75\n4,1\n");

    let samp = d.join("samples");
    ok(&["sample", "--model", s(&best), "--n", "3", "--out", s(&samp)]);
    assert!(samp.join("sample_02.pgm").exists());

    let cos = d.join("cos.csv");
    ok(&["diag-cos", "--table", s(&table), "--attributes", "speaker", "--out", s(&cos)]);
    assert_eq!(std::fs::read_to_string(&cos).unwrap().lines().count(), 5);
    let cov = d.join("cov.csv");
    ok(&[&["diag-cov", "--model", s(&best), "--out", s(&cov)][..], &seg_args].concat());
    assert_eq!(std::fs::read_to_string(&cov).unwrap().lines().count(), 5);

    let probe_args = |attr: &str, out: &Path| {
        let mut v: Vec<String> = ["probe-train", "--segments", s(&segments), "--attribute", attr, "--out", s(out), "--role-period", "5"]
            .iter()
            .map(|x| x.to_string())
            .collect();
        v.extend(["--conv", "4,8,8", "--fc", "16", "--max-epochs", "2", "--batch-size", "32"].map(String::from));
        v
    };
    let (ps, pp) = (d.join("probe_spk"), d.join("probe_phone"));
    for (a, o) in [("speaker", &ps), ("phone", &pp)] {
        let args = probe_args(a, o);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let rep = d.join("report");
    let out = ok(&[
        "report", "--model", s(&best), "--probe-a", s(&ps.join("probe.lspr")), "--probe-b", s(&pp.join("probe.lspr")),
        "--shift", s(&shift), "--segments", s(&segments), "--role-period", "5", "--out", s(&rep),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Average posteriors over"));
    assert_eq!(std::fs::read_to_string(rep.join("report.csv")).unwrap().lines().count(), 3);
}

#[test]
fn training_without_a_dev_split_names_the_rule() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth-data", "--out", s(&d.join("c")), "--speakers", "2", "--phones", "2", "--utts-per-speaker", "2"]);
    // Drop the dev speaker from the index.
    ok(&["extract", "--manifest", s(&d.join("c/corpus.jsonl")), "--out", s(&d.join("f"))]);
    let idx = d.join("f/segments.jsonl");
    let kept: String = std::fs::read_to_string(&idx).unwrap().lines().filter(|l| !l.contains("\"dev\"")).map(|l| format!("{l}\n")).collect();
    std::fs::write(&idx, kept).unwrap();
    let out_dir = d.join("m");
    let mut args = vec!["train", "--segments", s(&idx), "--out", s(&out_dir)];
    args.extend_from_slice(SMALL);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dev split"));
}
