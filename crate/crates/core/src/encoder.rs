//! Bidirectional GRU sentence encoder.

use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamId, ParameterStore, Var};
use crate::spanoracle::TokenId;

/// One GRU cell: gate matrices map `[input; hidden]` to `hidden`, each with a
/// bias.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl GruParams {
    /// Records one GRU update:
    /// `z = σ(W_z[x,h] + b_z)`, `r = σ(W_r[x,h] + b_r)`,
    /// `h~ = tanh(W_h[x, r⊙h] + b_h)`, `h' = (1-z)⊙h + z⊙h~`.
    pub(crate) fn step(&self, g: &mut Graph<'_>, x: Var, h: Var) -> Var {
        let xh = g.concat(&[x, h]);
        let z_pre = g.affine(self.w_z, xh, self.b_z);
        let z = g.sigmoid(z_pre);
        let r_pre = g.affine(self.w_r, xh, self.b_r);
        let r = g.sigmoid(r_pre);
        let rh = g.mul(r, h);
        let xrh = g.concat(&[x, rh]);
        let cand_pre = g.affine(self.w_h, xrh, self.b_h);
        let cand = g.tanh(cand_pre);
        let keep = g.one_minus(z);
        let old = g.mul(keep, h);
        let new = g.mul(z, cand);
        g.add(old, new)
    }

    fn check(&self, store: &ParameterStore, x: usize, h: usize) -> Result<()> {
        let w = store.value(self.w_z);
        if x != self.input_size || h != self.hidden_size || w.cols() != x + h {
            return Err(Error::Shape(format!(
                "GRU expects input {} / hidden {}, got {x} / {h}",
                self.input_size, self.hidden_size
            )));
        }
        Ok(())
    }
}

/// Applies one GRU step to plain vectors.
pub fn gru_cell(store: &ParameterStore, params: &GruParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    params.check(store, x.len(), h_prev.len())?;
    let mut g = Graph::new(store);
    let xv = g.input(x.to_vec());
    let hv = g.input(h_prev.to_vec());
    let out = params.step(&mut g, xv, hv);
    Ok(g.value(out).to_vec())
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub src_emb: ParamId,
    pub fwd: GruParams,
    pub bwd: GruParams,
}

/// Per-position `[forward; backward]` states.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub states: Vec<Vec<f64>>,
    /// Backward state at the first position; seeds the decoder.
    pub backward_first: Vec<f64>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn hidden_size(&self) -> usize {
        self.backward_first.len()
    }

    pub fn forward(&self, i: usize) -> &[f64] {
        &self.states[i][..self.hidden_size()]
    }

    pub fn backward(&self, i: usize) -> &[f64] {
        &self.states[i][self.hidden_size()..]
    }
}

pub(crate) struct EncodedVars {
    pub states: Vec<Var>,
    pub backward_first: Var,
}

/// Records the BiGRU over `ids`; `emb_masks[i]` (dropout) scales embedding `i`.
pub(crate) fn encode_graph(
    g: &mut Graph<'_>,
    params: &EncoderParams,
    ids: &[TokenId],
    emb_masks: Option<Vec<Vec<f64>>>,
) -> EncodedVars {
    let d = params.fwd.hidden_size;
    let mut embs: Vec<Var> = ids.iter().map(|&id| g.embed(params.src_emb, id)).collect();
    if let Some(masks) = emb_masks {
        for (e, m) in embs.iter_mut().zip(masks) {
            *e = g.mul_const(*e, m);
        }
    }
    let zero = g.input(vec![0.0; d]);
    let mut fwd = Vec::with_capacity(ids.len());
    let mut h = zero;
    for &e in &embs {
        h = params.fwd.step(g, e, h);
        fwd.push(h);
    }
    let mut bwd = vec![zero; ids.len()];
    let mut h = zero;
    for i in (0..ids.len()).rev() {
        h = params.bwd.step(g, embs[i], h);
        bwd[i] = h;
    }
    let states = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| g.concat(&[f, b]))
        .collect();
    EncodedVars {
        states,
        backward_first: bwd[0],
    }
}

pub(crate) fn check_ids(ids: &[TokenId], vocab_size: usize) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("cannot encode an empty sentence".into()));
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= vocab_size) {
        return Err(Error::OutOfVocabulary {
            id,
            size: vocab_size,
        });
    }
    Ok(())
}

/// Runs the forward GRU left to right and the backward GRU right to left,
/// both from zero states, and concatenates their states per position.
pub fn encode_sentence(store: &ParameterStore, params: &EncoderParams, ids: &[TokenId]) -> Result<EncoderOutput> {
    check_ids(ids, store.value(params.src_emb).rows())?;
    let emb = store.value(params.src_emb).cols();
    params.fwd.check(store, emb, params.fwd.hidden_size)?;
    params.bwd.check(store, emb, params.bwd.hidden_size)?;
    let mut g = Graph::new(store);
    let vars = encode_graph(&mut g, params, ids, None);
    Ok(EncoderOutput {
        states: vars.states.iter().map(|&v| g.value(v).to_vec()).collect(),
        backward_first: g.value(vars.backward_first).to_vec(),
    })
}
