//! Sequential copying: the copy switch gate, the start/end pointer with its
//! copy state transducer, span probabilities and Copy Run.
//!
//! Both pointers score source positions with the same `W_p`, `U_p`, `v_p`.
//! End candidates are restricted to `[start, start + max_copy_len - 1]`
//! (clipped to the sentence), so every predicted span is well formed.

use crate::decoder::{decode_step, DecoderState, MemoryVector};
use crate::error::{Error, Result};
use crate::model::{Model, SourceMemory, SourceVars};
use crate::numcore::{masked_softmax, sigmoid, Graph, Var};
use crate::spanoracle::TokenId;

/// Records the pre-sigmoid gate activation `W_2 tanh(W_1 m + b_1) + b_2`.
pub(crate) fn gate_logit_graph(g: &mut Graph<'_>, model: &Model, m: Var) -> Var {
    let p = &model.params.gate;
    let hidden_pre = g.affine(p.w_1, m, p.b_1);
    let hidden = g.tanh(hidden_pre);
    g.affine(p.w_2, hidden, p.b_2)
}

pub(crate) struct SpanVars {
    pub start_scores: Var,
    pub end_scores: Var,
}

/// Records both pointer score vectors. End scores are unmasked; callers
/// restrict them to the window of the chosen start.
pub(crate) fn span_graph(g: &mut Graph<'_>, model: &Model, m: Var, src: &SourceVars) -> SpanVars {
    let p = &model.params.pointer;
    let t = &model.params.transducer;
    let qs_pre = g.affine(p.w_s, m, p.b_s);
    let q_s = g.tanh(qs_pre);
    let qs_proj = g.matvec(p.w_p, q_s);
    let start_scores = g.scores(qs_proj, &src.ptr_keys, p.v_p);
    let start_weights = g.softmax(start_scores, None);
    let c_s = g.weighted_sum(start_weights, &src.states);
    let cst_pre = g.affine(t.w_e, m, t.b_e);
    let cst = g.tanh(cst_pre);
    let q_e = t.gru.step(g, c_s, cst);
    let qe_proj = g.matvec(p.w_p, q_e);
    let end_scores = g.scores(qe_proj, &src.ptr_keys, p.v_p);
    SpanVars {
        start_scores,
        end_scores,
    }
}

/// Admissible end positions for a span starting at `start`.
pub fn end_mask(n: usize, start: usize, max_copy_len: usize) -> Vec<bool> {
    (0..n)
        .map(|i| i >= start && i < start + max_copy_len)
        .collect()
}

fn check_memory(model: &Model, m: &MemoryVector) -> Result<()> {
    if m.len() != model.hyper.memory_size() {
        return Err(Error::Shape(format!(
            "memory vector has width {}, model expects {}",
            m.len(),
            model.hyper.memory_size()
        )));
    }
    Ok(())
}

/// Pre-sigmoid copy gate activation.
pub fn copy_gate_logit(model: &Model, m: &MemoryVector) -> Result<f64> {
    check_memory(model, m)?;
    let mut g = Graph::new(&model.store);
    let mv = g.input(m.m.clone());
    let a = gate_logit_graph(&mut g, model, mv);
    Ok(g.scalar(a))
}

/// Copy probability `p_c`; the generate probability is `1 - p_c`.
pub fn copy_gate(model: &Model, m: &MemoryVector) -> Result<f64> {
    Ok(sigmoid(copy_gate_logit(model, m)?))
}

/// Output of one pointer pass over the source.
#[derive(Clone, Debug, PartialEq)]
pub struct PointerResult {
    pub weights: Vec<f64>,
    /// Argmax of `weights`; lowest index on ties.
    pub best: usize,
    pub context: Vec<f64>,
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Scores `v_p . tanh(W_p query + U_p h_i)` over unmasked positions,
/// normalizes them and returns the weighted context.
pub fn pointer_attend(
    model: &Model,
    query: &[f64],
    mem: &SourceMemory,
    mask: Option<&[bool]>,
) -> Result<PointerResult> {
    let d = model.hyper.hidden_size;
    if query.len() != d {
        return Err(Error::Shape(format!("pointer query width {} != {d}", query.len())));
    }
    if let Some(mask) = mask {
        if mask.len() != mem.len() {
            return Err(Error::Shape("mask length differs from the source".into()));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::EmptySupport);
        }
    }
    if mem.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut g = Graph::new(&model.store);
    let src = mem.vars(&mut g);
    let q = g.input(query.to_vec());
    let proj = g.matvec(model.params.pointer.w_p, q);
    let scores = g.scores(proj, &src.ptr_keys, model.params.pointer.v_p);
    let w = g.softmax(scores, mask);
    let ctx = g.weighted_sum(w, &src.states);
    let weights = g.value(w).to_vec();
    Ok(PointerResult {
        best: argmax(&weights),
        context: g.value(ctx).to_vec(),
        weights,
    })
}

/// Start distribution plus raw end scores for one memory vector. The end
/// distribution for a start comes from [`SpanDistributions::end_weights`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpanDistributions {
    pub start_weights: Vec<f64>,
    pub end_scores: Vec<f64>,
    pub max_copy_len: usize,
}

impl SpanDistributions {
    pub fn end_weights(&self, start: usize) -> Vec<f64> {
        masked_softmax(
            &self.end_scores,
            &end_mask(self.end_scores.len(), start, self.max_copy_len),
        )
    }

    /// Most probable end for `start` and its probability.
    pub fn best_end(&self, start: usize) -> (usize, f64) {
        let w = self.end_weights(start);
        let e = argmax(&w);
        (e, w[e])
    }

    /// Start positions by descending probability (lowest index on ties).
    pub fn ranked_starts(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.start_weights.len()).collect();
        idx.sort_by(|&a, &b| {
            self.start_weights[b]
                .partial_cmp(&self.start_weights[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }
}

pub fn span_distributions(
    model: &Model,
    m: &MemoryVector,
    mem: &SourceMemory,
    max_copy_len: usize,
) -> Result<SpanDistributions> {
    check_memory(model, m)?;
    if mem.is_empty() {
        return Err(Error::EmptySupport);
    }
    if max_copy_len == 0 {
        return Err(Error::InvalidArgument("max_copy_len must be positive".into()));
    }
    let mut g = Graph::new(&model.store);
    let src = mem.vars(&mut g);
    let mv = g.input(m.m.clone());
    let vars = span_graph(&mut g, model, mv, &src);
    let start_weights = crate::numcore::softmax(g.value(vars.start_scores));
    Ok(SpanDistributions {
        start_weights,
        end_scores: g.value(vars.end_scores).to_vec(),
        max_copy_len,
    })
}

/// A predicted source span with its pointer probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub p_start: f64,
    pub p_end: f64,
    pub start_weights: Vec<f64>,
    pub end_weights: Vec<f64>,
    /// Start-pointer context `c_s`.
    pub start_context: Vec<f64>,
}

/// Picks the most probable start, then the most probable end inside the
/// start's window.
pub fn predict_span(
    model: &Model,
    m: &MemoryVector,
    mem: &SourceMemory,
    max_copy_len: usize,
) -> Result<SpanPrediction> {
    let dist = span_distributions(model, m, mem, max_copy_len)?;
    let start = argmax(&dist.start_weights);
    let end_weights = dist.end_weights(start);
    let end = argmax(&end_weights);
    let mut start_context = vec![0.0; 2 * model.hyper.hidden_size];
    for (w, h) in dist.start_weights.iter().zip(&mem.enc.states) {
        for (c, x) in start_context.iter_mut().zip(h) {
            *c += w * x;
        }
    }
    Ok(SpanPrediction {
        start,
        end,
        p_start: dist.start_weights[start],
        p_end: end_weights[end],
        start_weights: dist.start_weights,
        end_weights,
        start_context,
    })
}

/// `p_c * p_start * p_end`.
pub fn span_probability(p_c: f64, p_start: f64, p_end: f64) -> Result<f64> {
    for p in [p_c, p_start, p_end] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "probability {p} outside [0, 1]"
            )));
        }
    }
    Ok(p_c * p_start * p_end)
}

/// Feeds copied words `1..l-1` through the decoder so the next ordinary step
/// consumes word `l`. A single-word copy leaves the state untouched.
///
/// `copied` holds target-vocabulary ids (unknown words already mapped to the
/// unknown id).
pub fn copy_run(
    model: &Model,
    state: &DecoderState,
    mem: &SourceMemory,
    copied: &[TokenId],
    l: usize,
) -> Result<DecoderState> {
    if l == 0 || copied.len() != l {
        return Err(Error::InvalidArgument(format!(
            "copy run of length {l} with {} copied ids",
            copied.len()
        )));
    }
    let mut st = state.clone();
    for &y in &copied[..l - 1] {
        st = decode_step(model, &st, mem, y)?.0;
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::init_decoder;
    use crate::model::tiny_hyper;
    use crate::spanoracle::BOS;

    fn memory_for(model: &Model, src: &[usize]) -> (SourceMemory, DecoderState, MemoryVector) {
        let mem = model.source_memory(src).unwrap();
        let st = init_decoder(model, &mem).unwrap();
        let (st, _, m) = decode_step(model, &st, &mem, BOS).unwrap();
        (mem, st, m)
    }

    #[test]
    fn gate_zero_and_saturated() {
        let mut model = Model::new(tiny_hyper(), 1).unwrap();
        let (_, _, m) = memory_for(&model, &[4, 5]);
        let ids: Vec<_> = [model.params.gate.w_1, model.params.gate.w_2].to_vec();
        for id in ids {
            model.store.value_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(copy_gate(&model, &m).unwrap(), 0.5);
        let b2 = model.params.gate.b_2;
        model.store.value_mut(b2).data_mut()[0] = 100.0;
        let p_c = copy_gate(&model, &m).unwrap();
        assert!((1.0 - p_c).abs() < 1e-30);
        let p_g = 1.0 - p_c;
        assert_eq!(p_c + p_g, 1.0);
    }

    #[test]
    fn pointer_uniform_ties_to_first() {
        let mut model = Model::new(tiny_hyper(), 2).unwrap();
        let v = model.params.pointer.v_p;
        model.store.value_mut(v).data_mut().fill(0.0);
        let mem = model.source_memory(&[4, 5, 6, 7]).unwrap();
        let r = pointer_attend(&model, &[0.1, 0.2, 0.3], &mem, None).unwrap();
        assert!(r.weights.iter().all(|&w| w == 0.25));
        assert_eq!(r.best, 0);
    }

    #[test]
    fn pointer_mask_forces_one_hot() {
        let model = Model::new(tiny_hyper(), 2).unwrap();
        let mem = model.source_memory(&[4, 5, 6, 7]).unwrap();
        let mask = [false, false, true, false];
        let r = pointer_attend(&model, &[0.1, 0.2, 0.3], &mem, Some(&mask)).unwrap();
        assert_eq!(r.weights, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(r.best, 2);
        assert_eq!(r.context, mem.enc.states[2]);
        let err = pointer_attend(&model, &[0.1, 0.2, 0.3], &mem, Some(&[false; 4])).unwrap_err();
        assert!(matches!(err, Error::EmptySupport));
    }

    #[test]
    fn single_source_span() {
        let model = Model::new(tiny_hyper(), 3).unwrap();
        let (mem, _, m) = memory_for(&model, &[9]);
        let span = predict_span(&model, &m, &mem, 3).unwrap();
        assert_eq!((span.start, span.end), (0, 0));
        assert_eq!((span.p_start, span.p_end), (1.0, 1.0));
    }

    #[test]
    fn length_one_cap_pins_end() {
        for seed in 0..10 {
            let model = Model::new(tiny_hyper(), seed).unwrap();
            let (mem, _, m) = memory_for(&model, &[4, 5, 6, 7, 8]);
            let span = predict_span(&model, &m, &mem, 1).unwrap();
            assert_eq!(span.start, span.end);
            assert_eq!(span.p_end, 1.0);
        }
    }

    #[test]
    fn span_window_respected() {
        for seed in 0..20 {
            let model = Model::new(tiny_hyper(), seed).unwrap();
            let (mem, _, m) = memory_for(&model, &[4, 5, 6, 7, 8, 9, 10]);
            let span = predict_span(&model, &m, &mem, 3).unwrap();
            assert!(span.start <= span.end && span.end < span.start + 3);
            assert_eq!(span.p_start, span.start_weights[span.start]);
            assert_eq!(span.p_end, span.end_weights[span.end]);
        }
    }

    #[test]
    fn span_probability_cases() {
        assert!((span_probability(0.8, 0.5, 0.25).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(span_probability(0.0, 0.7, 0.3).unwrap(), 0.0);
        assert_eq!(span_probability(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert!(span_probability(1.5, 0.5, 0.5).is_err());
        assert!(span_probability(0.5, -0.1, 0.5).is_err());
    }

    #[test]
    fn copy_run_lengths() {
        let model = Model::new(tiny_hyper(), 4).unwrap();
        let (mem, st, _) = memory_for(&model, &[4, 5, 6]);
        let same = copy_run(&model, &st, &mem, &[5], 1).unwrap();
        assert_eq!(same, st);
        let two = copy_run(&model, &st, &mem, &[5, 6], 2).unwrap();
        let manual = decode_step(&model, &st, &mem, 5).unwrap().0;
        assert_eq!(two, manual);
        assert_eq!(two.t, st.t + 1);
        assert!(copy_run(&model, &st, &mem, &[5], 2).is_err());
        assert!(copy_run(&model, &st, &mem, &[], 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn span_probability_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0) {
                let p = span_probability(a, b, c).unwrap();
                prop_assert!(p <= a.min(b).min(c));
            }
        }
    }
}
