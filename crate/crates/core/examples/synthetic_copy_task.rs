//! Trains a small model on the synthetic span-copy task and reports held-out
//! accuracy. Pass a batch count to shorten the run: `-- 300`.

use std::time::Instant;

use seqcopynet::model::{Hyper, Model};
use seqcopynet::numcore::RngState;
use seqcopynet::synthetic::{evaluate_task, Task, TaskConfig, TaskReport};
use seqcopynet::training::{train, TrainConfig};
use seqcopynet::Result;

pub fn run_example(batches: usize, train_pairs: usize, test_pairs: usize) -> Result<TaskReport> {
    let task = Task::new(TaskConfig::default())?;
    let mut rng = RngState::new(2024);
    let train_set = task.instances(&task.sample_n(train_pairs, &mut rng), 5)?;
    let dev_set = task.instances(&task.sample_n(100, &mut rng), 5)?;
    let test_set = task.instances(&task.sample_n(test_pairs, &mut rng), 5)?;
    let hyper = Hyper {
        emb_size: 32,
        hidden_size: 64,
        src_vocab_size: task.src_vocab.len(),
        tgt_vocab_size: task.tgt_vocab.len(),
        max_copy_len: 5,
    };
    let mut model = Model::new(hyper, 7)?;
    let cfg = TrainConfig {
        batch_size: 32,
        lr: 0.003,
        dropout_p: 0.1,
        eval_every: 250,
        max_steps: batches,
        max_epochs: 100,
        seed: 7,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    train(&cfg, &train_set, &dev_set, &mut model, |rec, _| {
        println!("{rec}\t{:.0}s", start.elapsed().as_secs_f64());
        Ok(())
    })?;
    evaluate_task(&model, &task, &test_set, 20)
}

fn main() -> Result<()> {
    let batches = std::env::args().nth(1).map_or(3000, |a| a.parse().expect("batch count"));
    let report = run_example(batches, 5000, 500)?;
    println!("token accuracy       {:.4}", report.token_accuracy);
    println!("gate at span starts  {:.4}", report.span_start_gate_accuracy);
    println!("gate at generation   {:.4}", report.generate_gate_accuracy);
    println!("copy fidelity        {:.4}", report.copy_fidelity);
    println!("exact match          {:.4}", report.exact_match);
    Ok(())
}
