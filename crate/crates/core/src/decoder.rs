//! Attention decoder: initial state, recurrent update with concat attention,
//! the decoder memory vector and the maxout generation readout.

use crate::error::{Error, Result};
use crate::model::{Model, SourceMemory, SourceVars};
use crate::numcore::{Graph, Var};
use crate::spanoracle::{TokenId, BOS};

/// Recurrent decoder state after `t` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub s: Vec<f64>,
    /// Context vector of the latest step; zero before the first step.
    pub c: Vec<f64>,
    /// Token consumed by the latest step ([`BOS`] before the first step).
    pub y_prev: TokenId,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

/// `[emb(y_prev); s_t; c_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryVector {
    pub m: Vec<f64>,
    emb_size: usize,
    hidden_size: usize,
}

impl MemoryVector {
    pub fn new(emb: &[f64], s: &[f64], c: &[f64]) -> Result<Self> {
        if c.len() != 2 * s.len() {
            return Err(Error::Shape(format!(
                "context must be twice the state width, got {} and {}",
                c.len(),
                s.len()
            )));
        }
        let mut m = Vec::with_capacity(emb.len() + s.len() + c.len());
        m.extend_from_slice(emb);
        m.extend_from_slice(s);
        m.extend_from_slice(c);
        Ok(Self {
            m,
            emb_size: emb.len(),
            hidden_size: s.len(),
        })
    }

    pub fn emb(&self) -> &[f64] {
        &self.m[..self.emb_size]
    }

    pub fn s(&self) -> &[f64] {
        &self.m[self.emb_size..self.emb_size + self.hidden_size]
    }

    pub fn c(&self) -> &[f64] {
        &self.m[self.emb_size + self.hidden_size..]
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

pub(crate) fn init_graph(g: &mut Graph<'_>, model: &Model, backward_first: Var) -> Var {
    let p = &model.params.decoder;
    let pre = g.affine(p.w_d, backward_first, p.b_d);
    g.tanh(pre)
}

/// `s_0 = tanh(W_d h_back_first + b_d)`, zero context, [`BOS`] input.
pub fn init_decoder(model: &Model, mem: &SourceMemory) -> Result<DecoderState> {
    let d = model.hyper.hidden_size;
    if mem.enc.backward_first.len() != d {
        return Err(Error::Shape(format!(
            "encoder state width {} does not match hidden size {d}",
            mem.enc.backward_first.len()
        )));
    }
    let mut g = Graph::new(&model.store);
    let bf = g.input(mem.enc.backward_first.clone());
    let s = init_graph(&mut g, model, bf);
    Ok(DecoderState {
        s: g.value(s).to_vec(),
        c: vec![0.0; 2 * d],
        y_prev: BOS,
        t: 0,
    })
}

pub(crate) struct StepVars {
    pub emb: Var,
    pub s: Var,
    pub alpha: Var,
    pub c: Var,
}

/// Records `s_t = GRU([emb(y_prev); c_prev], s_prev)` followed by attention.
/// `input_mask` applies dropout to the GRU's copy of the embedding only.
pub(crate) fn step_graph(
    g: &mut Graph<'_>,
    model: &Model,
    s_prev: Var,
    c_prev: Var,
    y_prev: TokenId,
    src: &SourceVars,
    input_mask: Option<Vec<f64>>,
) -> StepVars {
    let p = &model.params.decoder;
    let emb = g.embed(p.tgt_emb, y_prev);
    let gru_emb = match input_mask {
        Some(mask) => g.mul_const(emb, mask),
        None => emb,
    };
    let x = g.concat(&[gru_emb, c_prev]);
    let s = p.gru.step(g, x, s_prev);
    let q = g.matvec(p.w_a, s);
    let scores = g.scores(q, &src.attn_keys, p.v_a);
    let alpha = g.softmax(scores, None);
    let c = g.weighted_sum(alpha, &src.states);
    StepVars { emb, s, alpha, c }
}

/// Records `W_o maxout(W_r emb + U_r c + V_r s)`.
pub(crate) fn logits_graph(g: &mut Graph<'_>, model: &Model, emb: Var, s: Var, c: Var) -> Var {
    let p = &model.params.decoder;
    let a = g.matvec(p.w_r, emb);
    let b = g.matvec(p.u_r, c);
    let cc = g.matvec(p.v_r, s);
    let ab = g.add(a, b);
    let r = g.add(ab, cc);
    let r2 = g.maxout(r);
    g.matvec(p.w_o, r2)
}

fn check_state(model: &Model, state: &DecoderState, mem: &SourceMemory) -> Result<()> {
    let d = model.hyper.hidden_size;
    if state.s.len() != d || state.c.len() != 2 * d {
        return Err(Error::Shape(format!(
            "decoder state widths {} / {} do not match hidden size {d}",
            state.s.len(),
            state.c.len()
        )));
    }
    if mem.is_empty() || mem.enc.states.iter().any(|h| h.len() != 2 * d) {
        return Err(Error::Shape("source memory does not match the model".into()));
    }
    Ok(())
}

pub(crate) fn check_target_id(model: &Model, y: TokenId) -> Result<()> {
    if y >= model.hyper.tgt_vocab_size {
        return Err(Error::OutOfVocabulary {
            id: y,
            size: model.hyper.tgt_vocab_size,
        });
    }
    Ok(())
}

/// Consumes `y_prev`, updates the recurrent state, attends over the source
/// and assembles the memory vector. The returned state has `t + 1`.
pub fn decode_step(
    model: &Model,
    state: &DecoderState,
    mem: &SourceMemory,
    y_prev: TokenId,
) -> Result<(DecoderState, AttentionResult, MemoryVector)> {
    check_state(model, state, mem)?;
    check_target_id(model, y_prev)?;
    let mut g = Graph::new(&model.store);
    let src = mem.vars(&mut g);
    let s_prev = g.input(state.s.clone());
    let c_prev = g.input(state.c.clone());
    let v = step_graph(&mut g, model, s_prev, c_prev, y_prev, &src, None);
    let s = g.value(v.s).to_vec();
    let c = g.value(v.c).to_vec();
    let memory = MemoryVector::new(g.value(v.emb), &s, &c)?;
    let att = AttentionResult {
        weights: g.value(v.alpha).to_vec(),
        context: c.clone(),
    };
    Ok((
        DecoderState {
            s,
            c,
            y_prev,
            t: state.t + 1,
        },
        att,
        memory,
    ))
}

/// Max over consecutive pairs: `out[j] = max(r[2j], r[2j+1])`.
pub fn maxout(r: &[f64]) -> Result<Vec<f64>> {
    if r.len() % 2 != 0 {
        return Err(Error::Shape(format!("maxout needs an even length, got {}", r.len())));
    }
    Ok(r.chunks_exact(2).map(|p| p[0].max(p[1])).collect())
}

/// Pre-softmax generation scores for the step that produced `state`.
pub fn generate_logits(model: &Model, y_prev: TokenId, state: &DecoderState) -> Result<Vec<f64>> {
    check_target_id(model, y_prev)?;
    let d = model.hyper.hidden_size;
    if state.s.len() != d || state.c.len() != 2 * d {
        return Err(Error::Shape("decoder state does not match the model".into()));
    }
    let mut g = Graph::new(&model.store);
    let emb = g.embed(model.params.decoder.tgt_emb, y_prev);
    let s = g.input(state.s.clone());
    let c = g.input(state.c.clone());
    let logits = logits_graph(&mut g, model, emb, s, c);
    Ok(g.value(logits).to_vec())
}

/// Softmax over the target vocabulary of the maxout readout.
pub fn generate_distribution(model: &Model, y_prev: TokenId, state: &DecoderState) -> Result<Vec<f64>> {
    let logits = generate_logits(model, y_prev, state)?;
    Ok(crate::numcore::softmax(&logits))
}
