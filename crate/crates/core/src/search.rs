//! Greedy and beam decoding over generate/copy actions, and unknown-word
//! replacement from attention.
//!
//! Every decoding step scores two kinds of candidates from the same decoder
//! state: generating a target word (`log p_g + log p(y)`) and copying a
//! source span (`log p_c + log p_start + log p_end`). Greedy and beam search
//! share the candidate scorer, so a beam of one follows the greedy path.

use std::fmt::Write as _;

use crate::copymod::{copy_gate_logit, copy_run, span_distributions, SpanDistributions};
use crate::decoder::{decode_step, generate_logits, init_decoder, DecoderState};
use crate::error::{Error, Result};
use crate::model::{Model, SourceMemory};
use crate::numcore::softplus;
use crate::spanoracle::{TokenId, TrainingInstance, Vocabulary, BOS, EOS, PAD, UNK};

/// A source sentence as seen by the decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Source {
    pub tokens: Vec<String>,
    /// Ids in the source vocabulary (encoder input).
    pub src_ids: Vec<TokenId>,
    /// Ids in the target vocabulary (decoder input while copying).
    pub tgt_ids: Vec<TokenId>,
}

impl Source {
    pub fn new(tokens: Vec<String>, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Self {
        Self {
            src_ids: src_vocab.encode(&tokens),
            tgt_ids: tgt_vocab.encode(&tokens),
            tokens,
        }
    }

    pub fn from_instance(inst: &TrainingInstance) -> Self {
        Self {
            tokens: inst.source.clone(),
            src_ids: inst.x.clone(),
            tgt_ids: inst.x_tgt.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActionKind {
    Generate(TokenId),
    /// Inclusive source span and its surface tokens.
    Copy {
        start: usize,
        end: usize,
        tokens: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub kind: ActionKind,
    pub log_prob: f64,
}

impl Action {
    pub fn is_copy(&self) -> bool {
        matches!(self.kind, ActionKind::Copy { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub actions: Vec<Action>,
    pub raw_score: f64,
    /// Decoder state before the next step.
    pub state: DecoderState,
    /// Target id the next step consumes.
    pub next_input: TokenId,
    pub finished: bool,
    /// Decoder attention weights of the step that chose each action.
    pub attention_trace: Vec<Vec<f64>>,
}

impl Hypothesis {
    fn initial(state: DecoderState) -> Self {
        Self {
            actions: Vec::new(),
            raw_score: 0.0,
            state,
            next_input: BOS,
            finished: false,
            attention_trace: Vec::new(),
        }
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    /// Generated words plus copied sequences, not counting a final
    /// end-of-sentence token; at least 1.
    pub fn length_normalizer(&self) -> usize {
        length_normalizer(&self.actions)
    }

    pub fn normalized_score(&self) -> f64 {
        self.raw_score / self.length_normalizer() as f64
    }

    /// Output as target-vocabulary ids, without end-of-sentence.
    pub fn target_ids(&self, src: &Source) -> Vec<TokenId> {
        let mut out = Vec::new();
        for a in &self.actions {
            match &a.kind {
                ActionKind::Generate(EOS) => {}
                ActionKind::Generate(y) => out.push(*y),
                ActionKind::Copy { start, end, .. } => out.extend_from_slice(&src.tgt_ids[*start..=*end]),
            }
        }
        out
    }
}

/// Length normalizer for an action list.
pub fn length_normalizer(actions: &[Action]) -> usize {
    let eos = actions
        .iter()
        .filter(|a| a.kind == ActionKind::Generate(EOS))
        .count();
    (actions.len() - eos).max(1)
}

/// Scores of every candidate for one decoding step.
#[derive(Clone, Debug)]
pub struct StepScores {
    /// State after consuming the hypothesis' next input.
    pub state: DecoderState,
    pub attention: Vec<f64>,
    pub log_p_gen: f64,
    pub log_p_copy: f64,
    /// `log p(y)` over the target vocabulary.
    pub word_log_probs: Vec<f64>,
    pub spans: SpanDistributions,
}

/// A scored expansion of a hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub enum Candidate {
    Generate { word: TokenId, score: f64 },
    Copy { start: usize, end: usize, score: f64 },
}

impl Candidate {
    pub fn score(&self) -> f64 {
        match *self {
            Candidate::Generate { score, .. } | Candidate::Copy { score, .. } => score,
        }
    }
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// Runs one decoder step for `hyp` and scores all actions.
pub fn score_step(
    model: &Model,
    mem: &SourceMemory,
    state: &DecoderState,
    next_input: TokenId,
    max_copy_len: usize,
) -> Result<StepScores> {
    let (state, att, m) = decode_step(model, state, mem, next_input)?;
    let gate = copy_gate_logit(model, &m)?;
    let logits = generate_logits(model, next_input, &state)?;
    let spans = span_distributions(model, &m, mem, max_copy_len)?;
    Ok(StepScores {
        state,
        attention: att.weights,
        log_p_gen: -softplus(gate),
        log_p_copy: -softplus(-gate),
        word_log_probs: log_softmax(&logits),
        spans,
    })
}

impl StepScores {
    /// Best `k` words by score, lowest id first on ties. Padding and the
    /// begin-of-sentence symbol are never produced.
    pub fn generate_candidates(&self, k: usize) -> Vec<Candidate> {
        let mut ids: Vec<TokenId> = (0..self.word_log_probs.len())
            .filter(|&y| y != PAD && y != BOS)
            .collect();
        ids.sort_by(|&a, &b| {
            self.word_log_probs[b]
                .total_cmp(&self.word_log_probs[a])
                .then(a.cmp(&b))
        });
        ids.truncate(k);
        ids.into_iter()
            .map(|word| Candidate::Generate {
                word,
                score: self.log_p_gen + self.word_log_probs[word],
            })
            .collect()
    }

    /// The `k` most probable starts, each with its most probable end.
    pub fn copy_candidates(&self, k: usize) -> Vec<Candidate> {
        self.spans
            .ranked_starts()
            .into_iter()
            .take(k)
            .map(|start| {
                let (end, p_end) = self.spans.best_end(start);
                Candidate::Copy {
                    start,
                    end,
                    score: self.log_p_copy + self.spans.start_weights[start].ln() + p_end.ln(),
                }
            })
            .collect()
    }

    /// Generate candidates followed by copy candidates.
    pub fn candidates(&self, k: usize) -> Vec<Candidate> {
        let mut c = self.generate_candidates(k);
        c.extend(self.copy_candidates(k));
        c
    }
}

/// Applies `cand` to `hyp`, whose step was scored as `scores`.
pub fn extend(
    model: &Model,
    mem: &SourceMemory,
    src: &Source,
    hyp: &Hypothesis,
    scores: &StepScores,
    cand: &Candidate,
) -> Result<Hypothesis> {
    let mut next = hyp.clone();
    next.raw_score += cand.score();
    next.attention_trace.push(scores.attention.clone());
    match *cand {
        Candidate::Generate { word, score } => {
            next.actions.push(Action {
                kind: ActionKind::Generate(word),
                log_prob: score,
            });
            next.state = scores.state.clone();
            next.next_input = word;
            next.finished = word == EOS;
        }
        Candidate::Copy { start, end, score } => {
            let ids = &src.tgt_ids[start..=end];
            next.actions.push(Action {
                kind: ActionKind::Copy {
                    start,
                    end,
                    tokens: src.tokens[start..=end].to_vec(),
                },
                log_prob: score,
            });
            next.state = copy_run(model, &scores.state, mem, ids, ids.len())?;
            next.next_input = ids[ids.len() - 1];
        }
    }
    Ok(next)
}

fn check_source(model: &Model, src: &Source, max_steps: usize) -> Result<()> {
    if max_steps == 0 {
        return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
    }
    if src.is_empty() {
        return Err(Error::EmptyInput("cannot decode an empty source".into()));
    }
    if src.src_ids.len() != src.len() || src.tgt_ids.len() != src.len() {
        return Err(Error::InvalidArgument("source ids do not match its tokens".into()));
    }
    if let Some(&id) = src.tgt_ids.iter().find(|&&id| id >= model.hyper.tgt_vocab_size) {
        return Err(Error::OutOfVocabulary {
            id,
            size: model.hyper.tgt_vocab_size,
        });
    }
    Ok(())
}

/// Decoding start point: encoded source and the initial hypothesis.
pub fn start(model: &Model, src: &Source) -> Result<(SourceMemory, Hypothesis)> {
    let mem = model.source_memory(&src.src_ids)?;
    let state = init_decoder(model, &mem)?;
    Ok((mem, Hypothesis::initial(state)))
}

/// At each step takes the better of the best generate and the best copy
/// candidate (generate on ties) until end-of-sentence or `max_steps` actions.
pub fn greedy_decode(model: &Model, src: &Source, max_steps: usize, max_copy_len: usize) -> Result<Hypothesis> {
    check_source(model, src, max_steps)?;
    let (mem, mut hyp) = start(model, src)?;
    for _ in 0..max_steps {
        let scores = score_step(model, &mem, &hyp.state, hyp.next_input, max_copy_len)?;
        let gen = scores.generate_candidates(1).remove(0);
        let copy = scores.copy_candidates(1).remove(0);
        let pick = if copy.score() > gen.score() { copy } else { gen };
        hyp = extend(model, &mem, src, &hyp, &scores, &pick)?;
        if hyp.finished {
            break;
        }
    }
    Ok(hyp)
}

#[derive(Clone, Debug)]
pub struct BeamResult {
    pub best: Hypothesis,
    /// Hypotheses that produced end-of-sentence, in completion order.
    pub finished: Vec<Hypothesis>,
    /// Beam at termination.
    pub live: Vec<Hypothesis>,
}

/// Beam search. Each live hypothesis proposes its top `beam_size` generate
/// and top `beam_size` copy candidates; the best `beam_size` expansions by
/// raw score survive (generate before copy, then earlier hypotheses, on
/// ties) and finished ones leave the beam. The answer maximizes the
/// length-normalized score over finished hypotheses, or over the final beam
/// if none finished.
pub fn beam_decode(
    model: &Model,
    src: &Source,
    beam_size: usize,
    max_steps: usize,
    max_copy_len: usize,
) -> Result<BeamResult> {
    if beam_size == 0 {
        return Err(Error::InvalidArgument("beam_size must be at least 1".into()));
    }
    check_source(model, src, max_steps)?;
    let (mem, init) = start(model, src)?;
    let mut live = vec![init];
    let mut finished = Vec::new();
    for _ in 0..max_steps {
        if live.is_empty() {
            break;
        }
        let mut scored = Vec::with_capacity(live.len());
        let mut expansions: Vec<(usize, Candidate)> = Vec::new();
        for (i, hyp) in live.iter().enumerate() {
            let s = score_step(model, &mem, &hyp.state, hyp.next_input, max_copy_len)?;
            expansions.extend(s.candidates(beam_size).into_iter().map(|c| (i, c)));
            scored.push(s);
        }
        expansions.sort_by(|a, b| {
            (live[b.0].raw_score + b.1.score()).total_cmp(&(live[a.0].raw_score + a.1.score()))
        });
        expansions.truncate(beam_size);
        let mut next_live = Vec::with_capacity(beam_size);
        for (i, cand) in &expansions {
            let h = extend(model, &mem, src, &live[*i], &scored[*i], cand)?;
            if h.finished {
                finished.push(h);
            } else {
                next_live.push(h);
            }
        }
        live = next_live;
    }
    let pool = if finished.is_empty() { &live } else { &finished };
    let mut best = &pool[0];
    for h in &pool[1..] {
        if h.normalized_score() > best.normalized_score() {
            best = h;
        }
    }
    Ok(BeamResult {
        best: best.clone(),
        finished: finished.clone(),
        live: live.clone(),
    })
}

/// Surface tokens of a hypothesis. A generated unknown word becomes the
/// source token under that step's attention peak; copied tokens keep their
/// source forms; end-of-sentence is dropped.
pub fn replace_unk(hyp: &Hypothesis, source_tokens: &[String], tgt_vocab: &Vocabulary) -> Result<Vec<String>> {
    Ok(surface_actions(hyp, source_tokens, tgt_vocab)?
        .into_iter()
        .flat_map(|(_, toks)| toks)
        .collect())
}

fn surface_actions(
    hyp: &Hypothesis,
    source_tokens: &[String],
    tgt_vocab: &Vocabulary,
) -> Result<Vec<(bool, Vec<String>)>> {
    if hyp.attention_trace.len() != hyp.actions.len() {
        return Err(Error::Internal(format!(
            "{} attention entries for {} actions",
            hyp.attention_trace.len(),
            hyp.actions.len()
        )));
    }
    let mut out = Vec::with_capacity(hyp.actions.len());
    for (a, att) in hyp.actions.iter().zip(&hyp.attention_trace) {
        match &a.kind {
            ActionKind::Generate(EOS) => {}
            ActionKind::Generate(UNK) => {
                if att.len() != source_tokens.len() {
                    return Err(Error::Internal(
                        "attention width differs from the source length".into(),
                    ));
                }
                let peak = crate::copymod::argmax(att);
                out.push((false, vec![source_tokens[peak].clone()]));
            }
            ActionKind::Generate(y) => {
                let tok = tgt_vocab.token(*y).ok_or(Error::OutOfVocabulary {
                    id: *y,
                    size: tgt_vocab.len(),
                })?;
                out.push((false, vec![tok.to_owned()]));
            }
            ActionKind::Copy { tokens, .. } => out.push((true, tokens.clone())),
        }
    }
    Ok(out)
}

/// Output with copied spans in brackets, e.g. `w1 [w2 w3] w4`.
pub fn format_trace(hyp: &Hypothesis, source_tokens: &[String], tgt_vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for (copied, toks) in surface_actions(hyp, source_tokens, tgt_vocab)? {
        if !out.is_empty() {
            out.push(' ');
        }
        if copied {
            let _ = write!(out, "[{}]", toks.join(" "));
        } else {
            out.push_str(&toks.join(" "));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tiny_hyper;

    fn source(model: &Model, ids: &[TokenId]) -> Source {
        Source {
            tokens: ids.iter().map(|i| format!("w{i}")).collect(),
            src_ids: ids.to_vec(),
            tgt_ids: ids.iter().map(|&i| i % model.hyper.tgt_vocab_size).collect(),
        }
    }

    fn generate(y: TokenId) -> Action {
        Action {
            kind: ActionKind::Generate(y),
            log_prob: -0.1,
        }
    }

    fn copy(n: usize) -> Action {
        Action {
            kind: ActionKind::Copy {
                start: 0,
                end: n - 1,
                tokens: vec!["x".into(); n],
            },
            log_prob: -0.1,
        }
    }

    #[test]
    fn normalizer_counts_spans_once() {
        let actions = vec![generate(5), generate(6), generate(7), copy(2), generate(8), copy(2), generate(EOS)];
        assert_eq!(length_normalizer(&actions), 6);
        assert_eq!(length_normalizer(&[generate(EOS)]), 1);
        assert_eq!(length_normalizer(&[]), 1);
    }

    #[test]
    fn closed_gate_never_copies() {
        let mut m = Model::new(tiny_hyper(), 4).unwrap();
        let b2 = m.params.gate.b_2;
        m.store.value_mut(b2).data_mut()[0] = -1e3;
        let src = source(&m, &[4, 5, 6, 7]);
        let h = greedy_decode(&m, &src, 10, 3).unwrap();
        assert!(h.actions.iter().all(|a| !a.is_copy()));
        let b = beam_decode(&m, &src, 3, 10, 3).unwrap();
        assert!(b.best.actions.iter().all(|a| !a.is_copy()));
    }

    #[test]
    fn open_gate_copies_single_token() {
        let mut m = Model::new(tiny_hyper(), 4).unwrap();
        let b2 = m.params.gate.b_2;
        m.store.value_mut(b2).data_mut()[0] = 1e3;
        let src = source(&m, &[6]);
        let h = greedy_decode(&m, &src, 4, 3).unwrap();
        assert_eq!(h.actions.len(), 4);
        for a in &h.actions {
            assert_eq!(
                a.kind,
                ActionKind::Copy {
                    start: 0,
                    end: 0,
                    tokens: vec!["w6".into()]
                }
            );
        }
    }

    #[test]
    fn raw_score_is_sum_of_actions() {
        let m = Model::new(tiny_hyper(), 11).unwrap();
        let src = source(&m, &[4, 9, 5, 11, 7]);
        let b = beam_decode(&m, &src, 4, 6, 3).unwrap();
        for h in b.finished.iter().chain(&b.live) {
            let sum: f64 = h.actions.iter().map(|a| a.log_prob).sum();
            assert!((sum - h.raw_score).abs() < 1e-9);
            assert!(h.actions.iter().all(|a| a.log_prob <= 0.0));
            assert_eq!(h.finished, h.actions.last().map(|a| a.kind == ActionKind::Generate(EOS)).unwrap());
        }
    }

    #[test]
    fn beam_of_one_is_greedy() {
        for seed in 0..5 {
            let m = Model::new(tiny_hyper(), seed).unwrap();
            let src = source(&m, &[4, 9, 5, 11]);
            let g = greedy_decode(&m, &src, 8, 3).unwrap();
            let b = beam_decode(&m, &src, 1, 8, 3).unwrap();
            assert_eq!(g.actions, b.best.actions);
        }
    }

    #[test]
    fn errors() {
        let m = Model::new(tiny_hyper(), 1).unwrap();
        let src = source(&m, &[4]);
        assert!(matches!(greedy_decode(&m, &src, 0, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(beam_decode(&m, &src, 0, 3, 3), Err(Error::InvalidArgument(_))));
        let empty = source(&m, &[]);
        assert!(matches!(greedy_decode(&m, &empty, 3, 3), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn unk_replacement_and_trace() {
        let vocab = Vocabulary::from_entries([("alpha", 1), ("beta", 1)]).unwrap();
        let src: Vec<String> = ["p", "q", "r", "s", "t"].iter().map(|s| s.to_string()).collect();
        let state = DecoderState {
            s: vec![],
            c: vec![],
            y_prev: BOS,
            t: 0,
        };
        let mut h = Hypothesis::initial(state);
        h.actions = vec![
            generate(4),
            generate(UNK),
            Action {
                kind: ActionKind::Copy {
                    start: 0,
                    end: 1,
                    tokens: vec!["p".into(), "q".into()],
                },
                log_prob: -0.2,
            },
            generate(5),
            generate(EOS),
        ];
        h.attention_trace = vec![
            vec![0.2; 5],
            vec![0.1, 0.1, 0.1, 0.6, 0.1],
            vec![0.2; 5],
            vec![0.2; 5],
            vec![0.2; 5],
        ];
        assert_eq!(replace_unk(&h, &src, &vocab).unwrap(), vec!["alpha", "s", "p", "q", "beta"]);
        assert_eq!(format_trace(&h, &src, &vocab).unwrap(), "alpha s [p q] beta");
        h.attention_trace.pop();
        assert!(matches!(replace_unk(&h, &src, &vocab), Err(Error::Internal(_))));
    }
}
