//! Drives preprocess, train, decode and eval through the command layer on a
//! generated corpus, as the `seqcopynet` binary would.

use std::fs;
use std::path::Path;

use clap::Parser;

use seqcopynet::cli::{run, Cli};
use seqcopynet::numcore::RngState;
use seqcopynet::spanoracle::format_corpus;
use seqcopynet::synthetic::{Task, TaskConfig};
use seqcopynet::Result;

fn command(args: &[String]) -> Result<String> {
    let cli = Cli::try_parse_from(std::iter::once("seqcopynet".to_string()).chain(args.iter().cloned()))
        .map_err(|e| seqcopynet::Error::Config(e.to_string()))?;
    run(&cli)
}

/// Returns the evaluation report.
pub fn run_example(dir: &Path, steps: usize) -> Result<String> {
    let task = Task::new(TaskConfig::default())?;
    let mut rng = RngState::new(12);
    let write = |name: &str, n: usize, rng: &mut RngState| {
        fs::write(dir.join(name), format_corpus(&task.sample_n(n, rng))).expect("write corpus");
    };
    write("train.tsv", 1000, &mut rng);
    write("dev.tsv", 30, &mut rng);
    write("test.tsv", 30, &mut rng);
    fs::write(
        dir.join("desk.conf"),
        "emb_size=24\nhidden_size=32\nbatch_size=32\nlr=0.003\ndropout=0.1\nmin_count=1\nbeam=4\nmax_decode_steps=20\n",
    )
    .expect("write config");

    let p = |name: &str| dir.join(name).display().to_string();
    let args = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
    let conf = p("desk.conf");
    println!("{}", command(&args(&format!("preprocess --config {conf} --train {} --out-dir {}", p("train.tsv"), p("prep"))))?);
    let log = command(&args(&format!(
        "train --config {conf} --train {} --dev {} --vocab-dir {} --checkpoint-dir {} --max-steps {steps} --eval-every {}",
        p("train.tsv"),
        p("dev.tsv"),
        p("prep"),
        p("ckpt"),
        steps.div_ceil(2).max(1)
    )))?;
    print!("{log}");
    command(&args(&format!(
        "decode --config {conf} --vocab-dir {} --checkpoint {} --input {} --output {} --trace {}",
        p("prep"),
        p("ckpt/latest.ckpt"),
        p("test.tsv"),
        p("out.txt"),
        p("out.trace")
    )))?;
    command(&args(&format!("eval --output {} --reference {}", p("out.txt"), p("test.tsv"))))
}

fn main() -> Result<()> {
    let steps = std::env::args().nth(1).map_or(200, |a| a.parse().expect("step count"));
    let dir = std::env::temp_dir().join("seqcopynet-cli-example");
    fs::create_dir_all(&dir).expect("temp dir");
    print!("{}", run_example(&dir, steps)?);
    println!("artifacts in {}", dir.display());
    Ok(())
}
