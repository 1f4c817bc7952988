//! Saves a model, reloads it and checks that decoding is unchanged.

use std::path::Path;

use seqcopynet::cli::checkpoint::{load_checkpoint, save_checkpoint};
use seqcopynet::model::{Hyper, Model};
use seqcopynet::search::{greedy_decode, Source};
use seqcopynet::spanoracle::Vocabulary;
use seqcopynet::Result;

/// Returns the checkpoint size in bytes and whether every decode matched.
pub fn run_example(dir: &Path) -> Result<(u64, bool)> {
    let words = ["storm", "hits", "coast", "thousands", "evacuated", "from", "homes"];
    let vocab = Vocabulary::from_entries(words.iter().map(|w| (*w, 1)))?;
    let hyper = Hyper {
        emb_size: 10,
        hidden_size: 12,
        src_vocab_size: vocab.len(),
        tgt_vocab_size: vocab.len(),
        max_copy_len: 3,
    };
    let model = Model::new(hyper, 21)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&model, &path)?;
    let loaded = load_checkpoint(&path)?;

    let mut same = true;
    for k in 0..words.len() {
        let tokens: Vec<String> = words.iter().cycle().skip(k).take(5).map(|w| w.to_string()).collect();
        let src = Source::new(tokens, &vocab, &vocab);
        let a = greedy_decode(&model, &src, 10, 3)?;
        let b = greedy_decode(&loaded, &src, 10, 3)?;
        same &= a.actions.iter().map(|x| &x.kind).eq(b.actions.iter().map(|x| &x.kind));
    }
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    Ok((size, same))
}

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("seqcopynet-checkpoint-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let (size, same) = run_example(&dir)?;
    println!("checkpoint bytes   {size}");
    println!("decodes identical  {same}");
    Ok(())
}
