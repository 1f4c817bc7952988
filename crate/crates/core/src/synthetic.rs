//! Synthetic span-copy task for end-to-end checks.
//!
//! Each source sentence contains two spans wrapped in markers,
//! `<oK> w w w </>`. The target is the first span, two generator words that
//! name the markers' indices, then the second span:
//!
//! ```text
//! source: c71 <o3> c12 c99 </> c140 c7 <o8> c55 c160 c61 </> c3 c80 c91
//! target: c12 c99 g3 g18 c55 c160 c61
//! ```
//!
//! Source words `c0`..`c49` are absent from the target vocabulary, so spans
//! containing them can only be reproduced by copying.

use crate::copymod::copy_run;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numcore::RngState;
use crate::search::{greedy_decode, replace_unk, score_step, ActionKind, Source};
use crate::spanoracle::{Pair, TrainingInstance, Vocabulary, BOS};

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub source_len: usize,
    pub markers: usize,
    pub content_words: usize,
    /// Content words left out of the target vocabulary.
    pub oov_words: usize,
    pub min_span: usize,
    pub max_span: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            source_len: 15,
            markers: 10,
            content_words: 189,
            oov_words: 50,
            min_span: 2,
            max_span: 4,
        }
    }
}

impl TaskConfig {
    /// Source vocabulary size excluding reserved symbols.
    pub fn source_words(&self) -> usize {
        self.markers + 1 + self.content_words
    }

    pub fn generator_words(&self) -> usize {
        2 * self.markers
    }

    fn validate(&self) -> Result<()> {
        if self.markers == 0 || self.min_span == 0 || self.min_span > self.max_span {
            return Err(Error::InvalidArgument("bad synthetic task sizes".into()));
        }
        if self.oov_words >= self.content_words {
            return Err(Error::InvalidArgument("oov_words must be below content_words".into()));
        }
        if 2 * (self.max_span + 2) > self.source_len {
            return Err(Error::InvalidArgument("source too short for two spans".into()));
        }
        Ok(())
    }
}

pub fn marker(i: usize) -> String {
    format!("<o{i}>")
}

pub const CLOSE: &str = "</>";

pub fn content(i: usize) -> String {
    format!("c{i}")
}

pub fn generator(i: usize) -> String {
    format!("g{i}")
}

#[derive(Clone, Debug)]
pub struct Task {
    pub config: TaskConfig,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

impl Task {
    pub fn new(config: TaskConfig) -> Result<Self> {
        config.validate()?;
        let mut src: Vec<(String, u64)> = (0..config.markers).map(|i| (marker(i), 1)).collect();
        src.push((CLOSE.to_owned(), 1));
        src.extend((0..config.content_words).map(|i| (content(i), 1)));
        let mut tgt: Vec<(String, u64)> = (0..config.generator_words()).map(|i| (generator(i), 1)).collect();
        tgt.extend((config.oov_words..config.content_words).map(|i| (content(i), 1)));
        Ok(Self {
            src_vocab: Vocabulary::from_entries(src)?,
            tgt_vocab: Vocabulary::from_entries(tgt)?,
            config,
        })
    }

    /// Draws one pair.
    pub fn sample(&self, rng: &mut RngState) -> Pair {
        let c = &self.config;
        let l1 = c.min_span + rng.below(c.max_span - c.min_span + 1);
        let l2 = c.min_span + rng.below(c.max_span - c.min_span + 1);
        let (m1, m2) = (rng.below(c.markers), rng.below(c.markers));
        let fill = c.source_len - (l1 + 2) - (l2 + 2);
        // Filler words before, between and after the two blocks.
        let a = rng.below(fill + 1);
        let b = rng.below(fill - a + 1);
        let word = |rng: &mut RngState| content(rng.below(c.content_words));
        let mut source = Vec::with_capacity(c.source_len);
        let push_fill = |n: usize, source: &mut Vec<String>, rng: &mut RngState| {
            for _ in 0..n {
                source.push(word(rng));
            }
        };
        push_fill(a, &mut source, rng);
        source.push(marker(m1));
        let s1 = source.len();
        push_fill(l1, &mut source, rng);
        source.push(CLOSE.to_owned());
        push_fill(b, &mut source, rng);
        source.push(marker(m2));
        let s2 = source.len();
        push_fill(l2, &mut source, rng);
        source.push(CLOSE.to_owned());
        push_fill(fill - a - b, &mut source, rng);
        let mut target: Vec<String> = source[s1..s1 + l1].to_vec();
        target.push(generator(m1));
        target.push(generator(c.markers + m2));
        target.extend_from_slice(&source[s2..s2 + l2]);
        Pair { source, target }
    }

    pub fn sample_n(&self, n: usize, rng: &mut RngState) -> Vec<Pair> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    pub fn instances(&self, pairs: &[Pair], max_copy_len: usize) -> Result<Vec<TrainingInstance>> {
        pairs
            .iter()
            .map(|p| TrainingInstance::from_pair(p, &self.src_vocab, &self.tgt_vocab, max_copy_len))
            .collect()
    }
}

/// Held-out accuracy of a trained model.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaskReport {
    /// Position-wise token matches over `max(|output|, |reference|)`, summed
    /// over sentences.
    pub token_accuracy: f64,
    /// Fraction of gold span starts where the decoder chooses to copy under
    /// teacher forcing.
    pub span_start_gate_accuracy: f64,
    /// Same for gold generation steps choosing to generate.
    pub generate_gate_accuracy: f64,
    /// Fraction of emitted copy actions whose tokens equal their source slice.
    pub copy_fidelity: f64,
    pub exact_match: f64,
    pub copy_actions: usize,
}

/// Teacher-forced copy/generate decisions at the gold decision points of
/// `inst`: `(span starts correct, span starts, generate correct, generate steps)`.
pub fn gate_decisions(model: &Model, inst: &TrainingInstance) -> Result<(usize, usize, usize, usize)> {
    let max_copy_len = model.hyper.max_copy_len;
    let mem = model.source_memory(&inst.x)?;
    let mut state = crate::decoder::init_decoder(model, &mem)?;
    let mut prev = BOS;
    let mut counts = (0, 0, 0, 0);
    let mut t = 0;
    while t < inst.y.len() {
        let scores = score_step(model, &mem, &state, prev, max_copy_len)?;
        let copy_wins = scores.copy_candidates(1)[0].score() > scores.generate_candidates(1)[0].score();
        match inst.spans.iter().find(|s| s.tgt_start == t) {
            Some(span) => {
                counts.1 += 1;
                counts.0 += usize::from(copy_wins);
                let ids = &inst.y[span.tgt_start..=span.tgt_end];
                state = copy_run(model, &scores.state, &mem, ids, ids.len())?;
                prev = ids[ids.len() - 1];
                t = span.tgt_end + 1;
            }
            None => {
                counts.3 += 1;
                counts.2 += usize::from(!copy_wins);
                state = scores.state;
                prev = inst.y[t];
                t += 1;
            }
        }
    }
    Ok(counts)
}

/// Greedy-decodes every instance and scores the output against its target.
pub fn evaluate_task(model: &Model, task: &Task, instances: &[TrainingInstance], max_steps: usize) -> Result<TaskReport> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("no instances to evaluate".into()));
    }
    let (mut hit, mut total, mut exact) = (0usize, 0usize, 0usize);
    let (mut copies, mut faithful) = (0usize, 0usize);
    let mut gates = (0, 0, 0, 0);
    for inst in instances {
        let src = Source::from_instance(inst);
        let hyp = greedy_decode(model, &src, max_steps, model.hyper.max_copy_len)?;
        for a in &hyp.actions {
            if let ActionKind::Copy { start, end, tokens } = &a.kind {
                copies += 1;
                faithful += usize::from(tokens.as_slice() == &inst.source[*start..=*end]);
            }
        }
        let out = replace_unk(&hyp, &inst.source, &task.tgt_vocab)?;
        hit += out.iter().zip(&inst.target).filter(|(a, b)| a == b).count();
        total += out.len().max(inst.target.len());
        exact += usize::from(out == inst.target);
        let g = gate_decisions(model, inst)?;
        gates = (gates.0 + g.0, gates.1 + g.1, gates.2 + g.2, gates.3 + g.3);
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    Ok(TaskReport {
        token_accuracy: ratio(hit, total),
        span_start_gate_accuracy: ratio(gates.0, gates.1),
        generate_gate_accuracy: ratio(gates.2, gates.3),
        copy_fidelity: ratio(faithful, copies),
        exact_match: ratio(exact, instances.len()),
        copy_actions: copies,
    })
}
