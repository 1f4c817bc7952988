//! Model hyperparameters, parameter layout and the per-source attention cache.
//!
//! Indexing is 0-based throughout: source position `i` here is position
//! `i + 1` in the usual 1-based notation for `h_1..h_n`.

use crate::encoder::{EncoderOutput, EncoderParams, GruParams};
use crate::error::{Error, Result};
use crate::numcore::{xavier_init, Graph, ParamId, ParameterStore, RngState, Tensor, Var};
use crate::spanoracle::DEFAULT_MAX_COPY_LEN;

/// Architecture sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hyper {
    pub emb_size: usize,
    /// `d`; encoder states are `2d` wide.
    pub hidden_size: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub max_copy_len: usize,
}

impl Hyper {
    /// Full-size setting: 300-wide embeddings and 512-wide GRU states.
    pub fn full_scale(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        Self {
            emb_size: 300,
            hidden_size: 512,
            src_vocab_size,
            tgt_vocab_size,
            max_copy_len: DEFAULT_MAX_COPY_LEN,
        }
    }

    /// Width of the decoder memory vector `[emb; s; c]`.
    pub fn memory_size(&self) -> usize {
        self.emb_size + 3 * self.hidden_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_size == 0
            || self.hidden_size == 0
            || self.max_copy_len == 0
            || self.src_vocab_size <= crate::spanoracle::UNK
            || self.tgt_vocab_size <= crate::spanoracle::UNK
        {
            return Err(Error::InvalidArgument(format!("invalid hyperparameters {self:?}")));
        }
        Ok(())
    }

    /// `key=value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("emb_size", self.emb_size),
            ("hidden_size", self.hidden_size),
            ("src_vocab_size", self.src_vocab_size),
            ("tgt_vocab_size", self.tgt_vocab_size),
            ("max_copy_len", self.max_copy_len),
        ]
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Xavier,
    Zero,
}

/// Parameter names, shapes and initializers in insertion order.
fn layout(h: &Hyper) -> Vec<(String, Vec<usize>, Init)> {
    let (e, d, m) = (h.emb_size, h.hidden_size, h.memory_size());
    let mut out = Vec::new();
    out.push(("encoder.src_emb".into(), vec![h.src_vocab_size, e], Init::Xavier));
    let gru = |prefix: &str, input: usize, hidden: usize| {
        let mut v = Vec::new();
        for gate in ["z", "r", "h"] {
            v.push((format!("{prefix}.w_{gate}"), vec![hidden, input + hidden], Init::Xavier));
        }
        for gate in ["z", "r", "h"] {
            v.push((format!("{prefix}.b_{gate}"), vec![hidden], Init::Zero));
        }
        v
    };
    out.extend(gru("encoder.fwd", e, d));
    out.extend(gru("encoder.bwd", e, d));
    out.push(("decoder.tgt_emb".into(), vec![h.tgt_vocab_size, e], Init::Xavier));
    out.push(("decoder.init.w_d".into(), vec![d, d], Init::Xavier));
    out.push(("decoder.init.b_d".into(), vec![d], Init::Zero));
    out.extend(gru("decoder.gru", e + 2 * d, d));
    out.push(("decoder.attn.w_a".into(), vec![d, d], Init::Xavier));
    out.push(("decoder.attn.u_a".into(), vec![d, 2 * d], Init::Xavier));
    out.push(("decoder.attn.v_a".into(), vec![d], Init::Xavier));
    out.push(("decoder.readout.w_r".into(), vec![2 * d, e], Init::Xavier));
    out.push(("decoder.readout.u_r".into(), vec![2 * d, 2 * d], Init::Xavier));
    out.push(("decoder.readout.v_r".into(), vec![2 * d, d], Init::Xavier));
    out.push(("decoder.out.w_o".into(), vec![h.tgt_vocab_size, d], Init::Xavier));
    out.push(("copy.gate.w_1".into(), vec![d, m], Init::Xavier));
    out.push(("copy.gate.b_1".into(), vec![d], Init::Zero));
    out.push(("copy.gate.w_2".into(), vec![1, d], Init::Xavier));
    out.push(("copy.gate.b_2".into(), vec![1], Init::Zero));
    out.push(("copy.start.w_s".into(), vec![d, m], Init::Xavier));
    out.push(("copy.start.b_s".into(), vec![d], Init::Zero));
    out.push(("copy.transducer.w_e".into(), vec![d, m], Init::Xavier));
    out.push(("copy.transducer.b_e".into(), vec![d], Init::Zero));
    out.extend(gru("copy.transducer.gru", 2 * d, d));
    out.push(("copy.pointer.w_p".into(), vec![d, d], Init::Xavier));
    out.push(("copy.pointer.u_p".into(), vec![d, 2 * d], Init::Xavier));
    out.push(("copy.pointer.v_p".into(), vec![d], Init::Xavier));
    out
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub tgt_emb: ParamId,
    pub w_d: ParamId,
    pub b_d: ParamId,
    pub gru: GruParams,
    pub w_a: ParamId,
    pub u_a: ParamId,
    pub v_a: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub v_r: ParamId,
    pub w_o: ParamId,
}

/// Copy switch gate: a tanh layer followed by a single sigmoid unit.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub w_1: ParamId,
    pub b_1: ParamId,
    pub w_2: ParamId,
    pub b_2: ParamId,
}

/// Maps the memory vector to the initial transducer state, then runs one GRU
/// step on the start-pointer context.
#[derive(Clone, Debug)]
pub struct TransducerParams {
    pub w_e: ParamId,
    pub b_e: ParamId,
    pub gru: GruParams,
}

/// Start-query projection plus the scoring weights shared by both pointers.
#[derive(Clone, Debug)]
pub struct PointerParams {
    pub w_s: ParamId,
    pub b_s: ParamId,
    pub w_p: ParamId,
    pub u_p: ParamId,
    pub v_p: ParamId,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub gate: GateParams,
    pub transducer: TransducerParams,
    pub pointer: PointerParams,
}

impl ModelParams {
    fn resolve(store: &ParameterStore, h: &Hyper) -> Result<Self> {
        let id = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::Incompatible(format!("missing parameter {name}")))
        };
        let gru = |prefix: &str, input: usize| -> Result<GruParams> {
            Ok(GruParams {
                w_z: id(&format!("{prefix}.w_z"))?,
                w_r: id(&format!("{prefix}.w_r"))?,
                w_h: id(&format!("{prefix}.w_h"))?,
                b_z: id(&format!("{prefix}.b_z"))?,
                b_r: id(&format!("{prefix}.b_r"))?,
                b_h: id(&format!("{prefix}.b_h"))?,
                input_size: input,
                hidden_size: h.hidden_size,
            })
        };
        let (e, d) = (h.emb_size, h.hidden_size);
        Ok(Self {
            encoder: EncoderParams {
                src_emb: id("encoder.src_emb")?,
                fwd: gru("encoder.fwd", e)?,
                bwd: gru("encoder.bwd", e)?,
            },
            decoder: DecoderParams {
                tgt_emb: id("decoder.tgt_emb")?,
                w_d: id("decoder.init.w_d")?,
                b_d: id("decoder.init.b_d")?,
                gru: gru("decoder.gru", e + 2 * d)?,
                w_a: id("decoder.attn.w_a")?,
                u_a: id("decoder.attn.u_a")?,
                v_a: id("decoder.attn.v_a")?,
                w_r: id("decoder.readout.w_r")?,
                u_r: id("decoder.readout.u_r")?,
                v_r: id("decoder.readout.v_r")?,
                w_o: id("decoder.out.w_o")?,
            },
            gate: GateParams {
                w_1: id("copy.gate.w_1")?,
                b_1: id("copy.gate.b_1")?,
                w_2: id("copy.gate.w_2")?,
                b_2: id("copy.gate.b_2")?,
            },
            transducer: TransducerParams {
                w_e: id("copy.transducer.w_e")?,
                b_e: id("copy.transducer.b_e")?,
                gru: gru("copy.transducer.gru", 2 * d)?,
            },
            pointer: PointerParams {
                w_s: id("copy.start.w_s")?,
                b_s: id("copy.start.b_s")?,
                w_p: id("copy.pointer.w_p")?,
                u_p: id("copy.pointer.u_p")?,
                v_p: id("copy.pointer.v_p")?,
            },
        })
    }
}

/// A complete parameterized model.
#[derive(Clone, Debug)]
pub struct Model {
    pub hyper: Hyper,
    pub store: ParameterStore,
    pub params: ModelParams,
}

impl Model {
    /// Xavier-initialized weights and zero biases.
    pub fn new(hyper: Hyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = RngState::new(seed);
        let mut store = ParameterStore::new();
        for (name, shape, init) in layout(&hyper) {
            let t = match init {
                Init::Xavier => xavier_init(&shape, &mut rng)?,
                Init::Zero => Tensor::zeros(&shape)?,
            };
            store.insert(name, t)?;
        }
        let params = ModelParams::resolve(&store, &hyper)?;
        Ok(Self {
            hyper,
            store,
            params,
        })
    }

    /// Wraps an existing store after checking names, order and shapes.
    pub fn from_store(hyper: Hyper, store: ParameterStore) -> Result<Self> {
        hyper.validate()?;
        let expected = layout(&hyper);
        if expected.len() != store.len() {
            return Err(Error::Incompatible(format!(
                "expected {} tensors, found {}",
                expected.len(),
                store.len()
            )));
        }
        for ((name, shape, _), (_, got_name, t)) in expected.iter().zip(store.iter()) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Incompatible(format!(
                    "expected {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        let params = ModelParams::resolve(&store, &hyper)?;
        Ok(Self {
            hyper,
            store,
            params,
        })
    }

    /// Looks up a parameter by name; panics on unknown names.
    pub fn param(&self, name: &str) -> ParamId {
        self.store
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Encodes a source sentence and caches its attention and pointer keys.
    pub fn source_memory(&self, src_ids: &[usize]) -> Result<SourceMemory> {
        let enc = crate::encoder::encode_sentence(&self.store, &self.params.encoder, src_ids)?;
        Ok(self.memory_from(enc))
    }

    pub fn memory_from(&self, enc: EncoderOutput) -> SourceMemory {
        let mut g = Graph::new(&self.store);
        let (mut attn_keys, mut ptr_keys) = (Vec::new(), Vec::new());
        for h in &enc.states {
            let hv = g.input(h.clone());
            let a = g.matvec(self.params.decoder.u_a, hv);
            let p = g.matvec(self.params.pointer.u_p, hv);
            attn_keys.push(g.value(a).to_vec());
            ptr_keys.push(g.value(p).to_vec());
        }
        SourceMemory {
            enc,
            attn_keys,
            ptr_keys,
        }
    }
}

/// Encoder output plus the decoder-attention keys `U_a h_i` and pointer keys
/// `U_p h_i`, computed once per source sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceMemory {
    pub enc: EncoderOutput,
    pub attn_keys: Vec<Vec<f64>>,
    pub ptr_keys: Vec<Vec<f64>>,
}

impl SourceMemory {
    pub fn len(&self) -> usize {
        self.enc.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.enc.states.is_empty()
    }

    pub(crate) fn vars(&self, g: &mut Graph<'_>) -> SourceVars {
        SourceVars {
            states: self.enc.states.iter().map(|h| g.input(h.clone())).collect(),
            attn_keys: self.attn_keys.iter().map(|k| g.input(k.clone())).collect(),
            ptr_keys: self.ptr_keys.iter().map(|k| g.input(k.clone())).collect(),
        }
    }
}

/// Graph nodes for a source sentence.
pub(crate) struct SourceVars {
    pub states: Vec<Var>,
    pub attn_keys: Vec<Var>,
    pub ptr_keys: Vec<Var>,
}

impl SourceVars {
    pub fn from_states(g: &mut Graph<'_>, model: &Model, states: Vec<Var>) -> Self {
        let attn_keys = states
            .iter()
            .map(|&h| g.matvec(model.params.decoder.u_a, h))
            .collect();
        let ptr_keys = states
            .iter()
            .map(|&h| g.matvec(model.params.pointer.u_p, h))
            .collect();
        Self {
            states,
            attn_keys,
            ptr_keys,
        }
    }
}

#[cfg(test)]
pub(crate) fn tiny_hyper() -> Hyper {
    Hyper {
        emb_size: 4,
        hidden_size: 3,
        src_vocab_size: 12,
        tgt_vocab_size: 9,
        max_copy_len: 3,
    }
}
