//! Command-line front end: `preprocess`, `train`, `decode` and `eval`.
//!
//! Settings come from built-in defaults, then an optional `--config` file of
//! `key=value` lines (`#` starts a comment), then command-line flags.

pub mod checkpoint;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::evalmetrics::evaluate;
use crate::model::{Hyper, Model};
use crate::search::{beam_decode, format_trace, greedy_decode, replace_unk, Source};
use crate::spanoracle::{
    build_vocab, corpus_stats, format_spans, read_corpus, tokenize, Side, TrainingInstance, Vocabulary,
};
use crate::training::{train, DevMetric, TrainConfig};

pub use checkpoint::{load_checkpoint, save_checkpoint};

pub const SRC_VOCAB_FILE: &str = "src.vocab";
pub const TGT_VOCAB_FILE: &str = "tgt.vocab";

/// Everything a command may need.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub emb_size: usize,
    pub hidden_size: usize,
    pub beam_size: usize,
    pub min_count: u64,
    pub max_decode_steps: usize,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub vocab_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            emb_size: 300,
            hidden_size: 512,
            beam_size: 8,
            min_count: 20,
            max_decode_steps: 50,
            train_path: None,
            dev_path: None,
            input: None,
            output: None,
            trace: None,
            reference: None,
            vocab_dir: None,
            checkpoint_dir: None,
            checkpoint: None,
            out_dir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Sets one setting by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let path = || Some(PathBuf::from(value.trim()));
        match key {
            "emb_size" => self.emb_size = parse_num(key, value)?,
            "hidden_size" => self.hidden_size = parse_num(key, value)?,
            "dropout" => t.dropout_p = parse_num(key, value)?,
            "lr" => t.lr = parse_num(key, value)?,
            "clip" => t.clip = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "beam" => self.beam_size = parse_num(key, value)?,
            "max_copy_len" => t.max_copy_len = parse_num(key, value)?,
            "min_count" => self.min_count = parse_num(key, value)?,
            "eval_every" => t.eval_every = parse_num(key, value)?,
            "decay_patience" => t.decay_patience = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "max_steps" => t.max_steps = parse_num(key, value)?,
            "max_epochs" => t.max_epochs = parse_num(key, value)?,
            "max_decode_steps" => {
                self.max_decode_steps = parse_num(key, value)?;
                t.dev_decode_steps = self.max_decode_steps;
            }
            "dev_metric" => {
                t.dev_metric = match value.trim() {
                    "loss" => DevMetric::Loss,
                    "rouge2" => DevMetric::Rouge2,
                    other => return Err(Error::Config(format!("dev_metric: unknown value {other:?}"))),
                }
            }
            "train" => self.train_path = path(),
            "dev" => self.dev_path = path(),
            "input" => self.input = path(),
            "output" => self.output = path(),
            "trace" => self.trace = path(),
            "reference" => self.reference = path(),
            "vocab_dir" => self.vocab_dir = path(),
            "checkpoint_dir" => self.checkpoint_dir = path(),
            "checkpoint" => self.checkpoint = path(),
            "out_dir" => self.out_dir = path(),
            _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_size == 0 || self.hidden_size == 0 || self.beam_size == 0 || self.max_decode_steps == 0 {
            return Err(Error::Config("sizes, beam and max_decode_steps must be positive".into()));
        }
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be positive".into()));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn need<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing required setting {key}")))
    }
}

#[derive(Debug, Parser)]
#[command(name = "seqcopynet", version, about = "Sequence-to-sequence summarization with span copying")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build vocabularies, annotate copy spans and report copy statistics.
    Preprocess(Settings),
    /// Train a model and write a checkpoint at every evaluation.
    Train(Settings),
    /// Decode source sentences with a trained checkpoint.
    Decode(Settings),
    /// Score decoded output against references.
    Eval(Settings),
}

/// Flags shared by all commands; each overrides the same key in `--config`.
#[derive(Debug, Default, Args)]
pub struct Settings {
    /// File of key=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus of source<TAB>target lines for training.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Development corpus.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Sentences to decode (one per line; text after a tab is ignored).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Decoded output file; also the hypotheses for `eval`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write output with copied spans in brackets.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Reference summaries (one per line; with a tab, the text after it).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Directory holding src.vocab and tgt.vocab.
    #[arg(long)]
    pub vocab_dir: Option<PathBuf>,
    /// Directory for training checkpoints and the training log.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint to decode with.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory for preprocess.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Embedding width [paper setting: 300].
    #[arg(long)]
    pub emb_size: Option<usize>,
    /// GRU state width [paper setting: 512].
    #[arg(long)]
    pub hidden_size: Option<usize>,
    /// Dropout probability [paper setting: 0.4].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Adam learning rate [paper setting: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Element-wise gradient clip bound [paper setting: 5].
    #[arg(long)]
    pub clip: Option<f64>,
    /// Mini-batch size [paper setting: 64].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Beam size; 1 decodes greedily [paper setting: 8].
    #[arg(long)]
    pub beam: Option<usize>,
    /// Longest copyable span [paper setting: 5].
    #[arg(long)]
    pub max_copy_len: Option<usize>,
    /// Vocabulary frequency threshold [paper setting: 20].
    #[arg(long)]
    pub min_count: Option<u64>,
    /// Batches between development evaluations [paper setting: 2000].
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Non-improving evaluations before halving the learning rate [paper setting: 6].
    #[arg(long)]
    pub decay_patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap on optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Cap on decoding actions per sentence.
    #[arg(long)]
    pub max_decode_steps: Option<usize>,
    /// `loss` or `rouge2`.
    #[arg(long)]
    pub dev_metric: Option<String>,
}

impl Settings {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut p = |k: &'static str, v: &Option<PathBuf>| {
            if let Some(v) = v {
                out.push((k, v.display().to_string()));
            }
        };
        p("train", &self.train);
        p("dev", &self.dev);
        p("input", &self.input);
        p("output", &self.output);
        p("trace", &self.trace);
        p("reference", &self.reference);
        p("vocab_dir", &self.vocab_dir);
        p("checkpoint_dir", &self.checkpoint_dir);
        p("checkpoint", &self.checkpoint);
        p("out_dir", &self.out_dir);
        let nums: [(&'static str, Option<String>); 16] = [
            ("emb_size", self.emb_size.map(|v| v.to_string())),
            ("hidden_size", self.hidden_size.map(|v| v.to_string())),
            ("dropout", self.dropout.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("clip", self.clip.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("beam", self.beam.map(|v| v.to_string())),
            ("max_copy_len", self.max_copy_len.map(|v| v.to_string())),
            ("min_count", self.min_count.map(|v| v.to_string())),
            ("eval_every", self.eval_every.map(|v| v.to_string())),
            ("decay_patience", self.decay_patience.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("max_steps", self.max_steps.map(|v| v.to_string())),
            ("max_epochs", self.max_epochs.map(|v| v.to_string())),
            ("max_decode_steps", self.max_decode_steps.map(|v| v.to_string())),
            ("dev_metric", self.dev_metric.clone()),
        ];
        out.extend(nums.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
        out
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn load_vocabs(dir: &Path) -> Result<(Vocabulary, Vocabulary)> {
    Ok((
        Vocabulary::load(dir.join(SRC_VOCAB_FILE))?,
        Vocabulary::load(dir.join(TGT_VOCAB_FILE))?,
    ))
}

/// Writes vocabularies, `train.spans` and `stats.tsv` to `out_dir`; returns
/// the statistics report.
pub fn preprocess(cfg: &RunConfig) -> Result<String> {
    let corpus = read_corpus(cfg.need(&cfg.train_path, "train")?)?;
    let out = cfg.need(&cfg.out_dir, "out_dir")?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let src_vocab = build_vocab(&corpus, cfg.min_count, Side::Source)?;
    let tgt_vocab = build_vocab(&corpus, cfg.min_count, Side::Target)?;
    src_vocab.save(out.join(SRC_VOCAB_FILE))?;
    tgt_vocab.save(out.join(TGT_VOCAB_FILE))?;
    let mut spans = String::new();
    let mut instances = Vec::with_capacity(corpus.len());
    for pair in &corpus {
        let inst = TrainingInstance::from_pair(pair, &src_vocab, &tgt_vocab, cfg.train.max_copy_len)?;
        spans.push_str(&format_spans(&inst.spans));
        spans.push('\n');
        instances.push(inst);
    }
    write_file(&out.join("train.spans"), &spans)?;
    let report = corpus_stats(&instances)?.report();
    write_file(&out.join("stats.tsv"), &report)?;
    Ok(report)
}

fn instances_for(path: &Path, src: &Vocabulary, tgt: &Vocabulary, max_copy_len: usize) -> Result<Vec<TrainingInstance>> {
    read_corpus(path)?
        .iter()
        .map(|p| TrainingInstance::from_pair(p, src, tgt, max_copy_len))
        .collect()
}

/// Trains from scratch; writes `step-NNNNNNNN.ckpt`, `latest.ckpt` and
/// `train.log` to the checkpoint directory. Returns the log text.
pub fn train_command(cfg: &RunConfig) -> Result<String> {
    let (src_vocab, tgt_vocab) = load_vocabs(cfg.need(&cfg.vocab_dir, "vocab_dir")?)?;
    let max_copy_len = cfg.train.max_copy_len;
    let train_set = instances_for(cfg.need(&cfg.train_path, "train")?, &src_vocab, &tgt_vocab, max_copy_len)?;
    let dev_set = instances_for(cfg.need(&cfg.dev_path, "dev")?, &src_vocab, &tgt_vocab, max_copy_len)?;
    let dir = cfg.need(&cfg.checkpoint_dir, "checkpoint_dir")?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hyper = Hyper {
        emb_size: cfg.emb_size,
        hidden_size: cfg.hidden_size,
        src_vocab_size: src_vocab.len(),
        tgt_vocab_size: tgt_vocab.len(),
        max_copy_len,
    };
    let mut model = Model::new(hyper, cfg.train.seed)?;
    let mut log = String::new();
    train(&cfg.train, &train_set, &dev_set, &mut model, |rec, m| {
        log.push_str(&format!("{rec}\n"));
        checkpoint::save_checkpoint(m, dir.join(format!("step-{:08}.ckpt", rec.step)))?;
        checkpoint::save_checkpoint(m, dir.join("latest.ckpt"))?;
        write_file(&dir.join("train.log"), &log)
    })?;
    Ok(log)
}

/// Decoded text and bracketed traces for source sentences.
pub fn decode_lines(
    model: &Model,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    lines: &[String],
    beam_size: usize,
    max_steps: usize,
) -> Result<(Vec<String>, Vec<String>)> {
    let (mut out, mut traces) = (Vec::new(), Vec::new());
    for (i, line) in lines.iter().enumerate() {
        let text = line.split('\t').next().unwrap_or("");
        let src = Source::new(tokenize(text), src_vocab, tgt_vocab);
        let hyp = if beam_size == 1 {
            greedy_decode(model, &src, max_steps, model.hyper.max_copy_len)
        } else {
            beam_decode(model, &src, beam_size, max_steps, model.hyper.max_copy_len).map(|r| r.best)
        }
        .map_err(|e| Error::InvalidArgument(format!("input line {}: {e}", i + 1)))?;
        out.push(replace_unk(&hyp, &src.tokens, tgt_vocab)?.join(" "));
        traces.push(format_trace(&hyp, &src.tokens, tgt_vocab)?);
    }
    Ok((out, traces))
}

pub fn decode_command(cfg: &RunConfig) -> Result<()> {
    let (src_vocab, tgt_vocab) = load_vocabs(cfg.need(&cfg.vocab_dir, "vocab_dir")?)?;
    let model = load_checkpoint(cfg.need(&cfg.checkpoint, "checkpoint")?)?;
    if model.hyper.src_vocab_size != src_vocab.len() || model.hyper.tgt_vocab_size != tgt_vocab.len() {
        return Err(Error::Incompatible("vocabulary sizes differ from the checkpoint".into()));
    }
    let lines = read_lines(cfg.need(&cfg.input, "input")?)?;
    let (out, traces) = decode_lines(&model, &src_vocab, &tgt_vocab, &lines, cfg.beam_size, cfg.max_decode_steps)?;
    let join = |v: Vec<String>| v.into_iter().map(|l| l + "\n").collect::<String>();
    write_file(cfg.need(&cfg.output, "output")?, &join(out))?;
    if let Some(trace) = &cfg.trace {
        write_file(trace, &join(traces))?;
    }
    Ok(())
}

/// Metric report for the decoded `output` file against `reference`.
pub fn eval_command(cfg: &RunConfig) -> Result<String> {
    let hyps = read_lines(cfg.need(&cfg.output, "output")?)?;
    let refs = read_lines(cfg.need(&cfg.reference, "reference")?)?;
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} outputs but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let cands: Vec<Vec<String>> = hyps.iter().map(|l| tokenize(l)).collect();
    let refs: Vec<Vec<String>> = refs
        .iter()
        .map(|l| tokenize(l.split_once('\t').map_or(l.as_str(), |(_, t)| t)))
        .collect();
    Ok(evaluate(&cands, &refs)?.to_report())
}

/// Runs one parsed command, returning what it prints.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Preprocess(s) => preprocess(&s.resolve()?),
        Command::Train(s) => train_command(&s.resolve()?),
        Command::Decode(s) => decode_command(&s.resolve()?).map(|_| String::new()),
        Command::Eval(s) => eval_command(&s.resolve()?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# desk scale\nemb_size = 16\nhidden_size=8  # small\n\nlr=0.01\n")
            .unwrap();
        assert_eq!((cfg.emb_size, cfg.hidden_size, cfg.train.lr), (16, 8, 0.01));
        assert!(matches!(cfg.apply_text("bogus=1"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_text("lr"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("batch_size", "x"), Err(Error::Config(_))));
    }

    #[test]
    fn defaults_match_published_settings() {
        let c = RunConfig::default();
        assert_eq!((c.emb_size, c.hidden_size, c.beam_size, c.min_count), (300, 512, 8, 20));
        let t = &c.train;
        assert_eq!((t.dropout_p, t.lr, t.clip), (0.4, 0.001, 5.0));
        assert_eq!((t.batch_size, t.max_copy_len, t.eval_every, t.decay_patience), (64, 5, 2000, 6));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        fs::write(&p, "beam=4\nlr=0.5\n").unwrap();
        let cli = Cli::try_parse_from([
            "seqcopynet",
            "decode",
            "--config",
            p.to_str().unwrap(),
            "--beam",
            "2",
        ])
        .unwrap();
        let Command::Decode(s) = &cli.command else { panic!() };
        let cfg = s.resolve().unwrap();
        assert_eq!((cfg.beam_size, cfg.train.lr), (2, 0.5));
    }

    #[test]
    fn help_tags_default_settings() {
        use clap::CommandFactory;
        let mut cmd = Cli::command();
        let help = cmd
            .find_subcommand_mut("train")
            .unwrap()
            .render_help()
            .to_string();
        for v in ["300", "512", "0.4", "0.001", "64", "8", "20", "2000", "6"] {
            assert!(help.contains(&format!("[paper setting: {v}]")), "{v}");
        }
    }
}
