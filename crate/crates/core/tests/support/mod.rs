#![allow(dead_code)]

pub mod reference;

use seqcopynet::model::{Hyper, Model};
use seqcopynet::numcore::RngState;
use seqcopynet::spanoracle::{CopySpan, TrainingInstance, EOS};

pub fn hyper(emb: usize, hidden: usize, vs: usize, vt: usize, max_copy_len: usize) -> Hyper {
    Hyper {
        emb_size: emb,
        hidden_size: hidden,
        src_vocab_size: vs,
        tgt_vocab_size: vt,
        max_copy_len,
    }
}

/// Xavier model with every tensor, biases included, redrawn uniformly from
/// `[-scale, scale]`.
pub fn random_model(h: Hyper, seed: u64, scale: f64) -> Model {
    let mut m = Model::new(h, seed).unwrap();
    let mut rng = RngState::new(seed ^ 0x5eed);
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        for v in m.store.value_mut(id).data_mut() {
            *v = scale * (2.0 * rng.uniform() - 1.0);
        }
    }
    m
}

/// A 6-token target with one 2-token span at target 1..=2 from source 2..=3.
pub fn six_token_instance(src_len: usize, vt: usize) -> TrainingInstance {
    let source: Vec<String> = (0..src_len).map(|i| format!("s{i}")).collect();
    let x: Vec<usize> = (0..src_len).map(|i| 4 + (i * 3) % 16).collect();
    let x_tgt: Vec<usize> = (0..src_len).map(|i| 4 + (i * 5) % (vt - 4)).collect();
    let mut y = vec![5, x_tgt[2], x_tgt[3], 7, 6, 9];
    let mut target: Vec<String> = y.iter().map(|i| format!("t{i}")).collect();
    target[1] = source[2].clone();
    target[2] = source[3].clone();
    y.push(EOS);
    TrainingInstance {
        source,
        target,
        x,
        x_tgt,
        y,
        spans: vec![CopySpan {
            tgt_start: 1,
            tgt_end: 2,
            src_start: 2,
            src_end: 3,
        }],
    }
}

pub fn spans_tuple(inst: &TrainingInstance) -> Vec<(usize, usize, usize, usize)> {
    inst.spans
        .iter()
        .map(|s| (s.tgt_start, s.tgt_end, s.src_start, s.src_end))
        .collect()
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}
