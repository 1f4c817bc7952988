use std::fs;
use std::path::Path;
use std::process::Command;

use clap::Parser;

use seqcopynet::cli::{checkpoint, run, Cli};
use seqcopynet::numcore::RngState;
use seqcopynet::spanoracle::{format_corpus, Vocabulary};
use seqcopynet::synthetic::{Task, TaskConfig};

fn cli(args: &[&str]) -> String {
    let parsed = Cli::try_parse_from(std::iter::once("seqcopynet").chain(args.iter().copied())).unwrap();
    run(&parsed).unwrap()
}

fn write_corpora(dir: &Path) {
    let task = Task::new(TaskConfig::default()).unwrap();
    let mut rng = RngState::new(77);
    fs::write(dir.join("train.tsv"), format_corpus(&task.sample_n(300, &mut rng))).unwrap();
    fs::write(dir.join("dev.tsv"), format_corpus(&task.sample_n(20, &mut rng))).unwrap();
    fs::write(dir.join("test.tsv"), format_corpus(&task.sample_n(12, &mut rng))).unwrap();
    fs::write(
        dir.join("small.conf"),
        "# desk scale\nemb_size=12\nhidden_size=16\nbatch_size=16\nlr=0.003\ndropout=0.1\neval_every=10\nmin_count=1\nseed=3\nmax_decode_steps=20\n",
    )
    .unwrap();
}

/// preprocess, train, decode (greedy and beam), eval; returns
/// `(stats, train log, checkpoint bytes, outputs, trace, eval report)`.
fn pipeline(dir: &Path) -> (String, String, Vec<u8>, String, String, String) {
    write_corpora(dir);
    let p = |name: &str| dir.join(name).display().to_string();
    let conf = p("small.conf");
    let stats = cli(&["preprocess", "--config", &conf, "--train", &p("train.tsv"), "--out-dir", &p("prep")]);
    let log = cli(&[
        "train", "--config", &conf, "--train", &p("train.tsv"), "--dev", &p("dev.tsv"),
        "--vocab-dir", &p("prep"), "--checkpoint-dir", &p("ckpt"), "--max-steps", "20",
    ]);
    let ckpt = p("ckpt/latest.ckpt");
    cli(&[
        "decode", "--config", &conf, "--vocab-dir", &p("prep"), "--checkpoint", &ckpt,
        "--input", &p("test.tsv"), "--output", &p("beam.txt"), "--trace", &p("beam.trace"), "--beam", "3",
    ]);
    cli(&[
        "decode", "--config", &conf, "--vocab-dir", &p("prep"), "--checkpoint", &ckpt,
        "--input", &p("test.tsv"), "--output", &p("greedy.txt"), "--beam", "1",
    ]);
    let report = cli(&["eval", "--output", &p("beam.txt"), "--reference", &p("test.tsv")]);
    let outputs = fs::read_to_string(dir.join("beam.txt")).unwrap() + &fs::read_to_string(dir.join("greedy.txt")).unwrap();
    (
        stats,
        log,
        fs::read(dir.join("ckpt/latest.ckpt")).unwrap(),
        outputs,
        fs::read_to_string(dir.join("beam.trace")).unwrap(),
        report,
    )
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (stats, log, _, outputs, trace, report) = pipeline(dir.path());
    let d = dir.path();

    assert!(stats.lines().count() >= 2, "{stats}");
    let src = Vocabulary::load(d.join("prep/src.vocab")).unwrap();
    let tgt = Vocabulary::load(d.join("prep/tgt.vocab")).unwrap();
    assert!(src.contains("<o3>") && !tgt.contains("<o3>"));
    assert_eq!(fs::read_to_string(d.join("prep/train.spans")).unwrap().lines().count(), 300);

    assert_eq!(log.lines().count(), 2);
    assert_eq!(fs::read_to_string(d.join("ckpt/train.log")).unwrap(), log);
    for step in [10, 20] {
        let path = d.join(format!("ckpt/step-{step:08}.ckpt"));
        let m = checkpoint::load_checkpoint(&path).unwrap();
        assert_eq!((m.hyper.emb_size, m.hyper.hidden_size), (12, 16));
        assert_eq!(m.hyper.tgt_vocab_size, tgt.len());
    }
    assert_eq!(
        fs::read(d.join("ckpt/step-00000020.ckpt")).unwrap(),
        fs::read(d.join("ckpt/latest.ckpt")).unwrap()
    );

    assert_eq!(outputs.lines().count(), 24);
    assert_eq!(trace.lines().count(), 12);
    let beam = fs::read_to_string(d.join("beam.txt")).unwrap();
    for (t, o) in trace.lines().zip(beam.lines()) {
        assert_eq!(t.replace(['[', ']'], ""), o);
    }
    let names: Vec<&str> = report.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names, ["ROUGE-1", "ROUGE-2", "ROUGE-L", "BLEU-4"]);
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(pipeline(a.path()), pipeline(b.path()));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.conf"), "beam=4\nlr=0.5\n").unwrap();
    let conf = dir.path().join("c.conf").display().to_string();
    let parsed = Cli::try_parse_from(["seqcopynet", "decode", "--config", &conf, "--beam", "2"]).unwrap();
    let seqcopynet::cli::Command::Decode(s) = &parsed.command else { panic!() };
    let cfg = s.resolve().unwrap();
    assert_eq!((cfg.beam_size, cfg.train.lr), (2, 0.5));
    assert_eq!(cfg.emb_size, 300);
}

#[test]
fn binary_reports_errors_on_one_line() {
    let exe = env!("CARGO_BIN_EXE_seqcopynet");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"NOTMAGIC\n").unwrap();
    fs::write(dir.path().join("in.txt"), "a b\n").unwrap();
    fs::create_dir(dir.path().join("v")).unwrap();
    let v = Vocabulary::from_entries([("a", 1), ("b", 1)]).unwrap();
    v.save(dir.path().join("v/src.vocab")).unwrap();
    v.save(dir.path().join("v/tgt.vocab")).unwrap();
    let out = Command::new(exe)
        .args(["decode", "--checkpoint"])
        .arg(&bad)
        .arg("--vocab-dir")
        .arg(dir.path().join("v"))
        .arg("--input")
        .arg(dir.path().join("in.txt"))
        .arg("--output")
        .arg(dir.path().join("out.txt"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("seqcopynet: "), "{err}");
    assert!(!dir.path().join("out.txt").exists());

    let missing = Command::new(exe).args(["eval", "--output", "/nonexistent/x"]).output().unwrap();
    assert!(!missing.status.success());

    let ok = Command::new(exe).args(["--help"]).output().unwrap();
    assert!(ok.status.success());
    let help = Command::new(exe).args(["train", "--help"]).output().unwrap();
    assert!(String::from_utf8(help.stdout).unwrap().contains("[paper setting: 512]"));
}
