//! Trains briefly on the synthetic task, then decodes a few held-out
//! sentences greedily and with a beam, marking copied spans in brackets.

use seqcopynet::model::{Hyper, Model};
use seqcopynet::numcore::RngState;
use seqcopynet::search::{beam_decode, format_trace, greedy_decode, Source};
use seqcopynet::synthetic::{Task, TaskConfig};
use seqcopynet::training::{train, TrainConfig};
use seqcopynet::Result;

pub struct Decoded {
    pub source: String,
    pub reference: String,
    pub greedy: String,
    pub beam: String,
    pub beam_score: f64,
}

pub fn run_example(batches: usize, sentences: usize) -> Result<Vec<Decoded>> {
    let task = Task::new(TaskConfig::default())?;
    let mut rng = RngState::new(3);
    let train_set = task.instances(&task.sample_n(2000, &mut rng), 5)?;
    let dev_set = task.instances(&task.sample_n(50, &mut rng), 5)?;
    let test = task.sample_n(sentences, &mut rng);
    let hyper = Hyper {
        emb_size: 32,
        hidden_size: 64,
        src_vocab_size: task.src_vocab.len(),
        tgt_vocab_size: task.tgt_vocab.len(),
        max_copy_len: 5,
    };
    let mut model = Model::new(hyper, 1)?;
    let cfg = TrainConfig {
        batch_size: 32,
        lr: 0.003,
        dropout_p: 0.1,
        eval_every: batches.max(1),
        max_steps: batches,
        max_epochs: 100,
        seed: 1,
        ..TrainConfig::default()
    };
    train(&cfg, &train_set, &dev_set, &mut model, |_, _| Ok(()))?;

    let mut out = Vec::new();
    for pair in &test {
        let src = Source::new(pair.source.clone(), &task.src_vocab, &task.tgt_vocab);
        let greedy = greedy_decode(&model, &src, 20, 5)?;
        let beam = beam_decode(&model, &src, 4, 20, 5)?.best;
        out.push(Decoded {
            source: pair.source.join(" "),
            reference: pair.target.join(" "),
            greedy: format_trace(&greedy, &src.tokens, &task.tgt_vocab)?,
            beam_score: beam.normalized_score(),
            beam: format_trace(&beam, &src.tokens, &task.tgt_vocab)?,
        });
    }
    Ok(out)
}

fn main() -> Result<()> {
    for d in run_example(300, 5)? {
        println!("source     {}", d.source);
        println!("reference  {}", d.reference);
        println!("greedy     {}", d.greedy);
        println!("beam 4     {}  ({:.4})\n", d.beam, d.beam_score);
    }
    Ok(())
}
