//! Compares backpropagated gradients of the full loss with central finite
//! differences on a tiny model.

use seqcopynet::model::{Hyper, Model};
use seqcopynet::numcore::{check_gradients, GradCheck};
use seqcopynet::spanoracle::{Pair, TrainingInstance, Vocabulary};
use seqcopynet::training::{batch_gradient, instance_loss_at};
use seqcopynet::Result;

pub fn run_example(epsilon: f64) -> Result<GradCheck> {
    let pair = Pair::new("police arrest two men in downtown robbery", "two men arrested in robbery");
    let src = Vocabulary::from_entries(pair.source.iter().map(|w| (w.as_str(), 1)))?;
    let tgt = Vocabulary::from_entries([("arrested", 1), ("in", 1), ("robbery", 1)])?;
    let inst = TrainingInstance::from_pair(&pair, &src, &tgt, 5)?;
    let hyper = Hyper {
        emb_size: 6,
        hidden_size: 8,
        src_vocab_size: src.len(),
        tgt_vocab_size: tgt.len(),
        max_copy_len: 5,
    };
    let mut model = Model::new(hyper, 11)?;
    batch_gradient(&mut model, std::slice::from_ref(&inst))?;
    let probe = model.clone();
    check_gradients(|s| instance_loss_at(&probe, s, &inst), &mut model.store, epsilon)
}

fn main() -> Result<()> {
    let r = run_example(1e-5)?;
    println!("components      {}", r.components);
    println!("max rel. error  {:.3e}", r.max_rel_error);
    println!("worst           {}[{}]", r.worst_param, r.worst_index);
    println!("analytic        {:.6e}", r.analytic);
    println!("numeric         {:.6e}", r.numeric);
    Ok(())
}
