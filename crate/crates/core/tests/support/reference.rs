//! Plain-loop forward pass over named weights, written without the graph
//! or any library math helpers.

use seqcopynet::model::Model;

pub struct Reference<'a> {
    model: &'a Model,
}

pub struct Step {
    pub emb: Vec<f64>,
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub c: Vec<f64>,
}

impl Step {
    pub fn memory(&self) -> Vec<f64> {
        let mut m = self.emb.clone();
        m.extend_from_slice(&self.s);
        m.extend_from_slice(&self.c);
        m
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

impl<'a> Reference<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self { model }
    }

    fn t(&self, name: &str) -> (usize, usize, &'a [f64]) {
        let t = self.model.store.value(self.model.param(name));
        let cols = if t.shape().len() == 2 { t.shape()[1] } else { 1 };
        (t.shape()[0], cols, t.data())
    }

    pub fn vec(&self, name: &str) -> Vec<f64> {
        self.t(name).2.to_vec()
    }

    pub fn row(&self, name: &str, i: usize) -> Vec<f64> {
        let (_, cols, data) = self.t(name);
        data[i * cols..(i + 1) * cols].to_vec()
    }

    pub fn mv(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let (rows, cols, data) = self.t(name);
        assert_eq!(cols, x.len(), "{name}");
        (0..rows)
            .map(|r| {
                let mut acc = 0.0;
                for k in 0..cols {
                    acc += data[r * cols + k] * x[k];
                }
                acc
            })
            .collect()
    }

    fn affine(&self, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
        let bias = self.vec(b);
        self.mv(w, x).iter().zip(bias).map(|(a, b)| a + b).collect()
    }

    pub fn gru(&self, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
        let xh = cat(&[x, h]);
        let z: Vec<f64> = self
            .affine(&format!("{prefix}.w_z"), &format!("{prefix}.b_z"), &xh)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = self
            .affine(&format!("{prefix}.w_r"), &format!("{prefix}.b_r"), &xh)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = self
            .affine(&format!("{prefix}.w_h"), &format!("{prefix}.b_h"), &cat(&[x, &rh]))
            .into_iter()
            .map(f64::tanh)
            .collect();
        (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect()
    }

    /// `(states, backward state at position 0)`.
    pub fn encode(&self, ids: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let d = self.model.hyper.hidden_size;
        let embs: Vec<Vec<f64>> = ids.iter().map(|&i| self.row("encoder.src_emb", i)).collect();
        let mut fwd = Vec::new();
        let mut h = vec![0.0; d];
        for e in &embs {
            h = self.gru("encoder.fwd", e, &h);
            fwd.push(h.clone());
        }
        let mut bwd = vec![Vec::new(); ids.len()];
        let mut h = vec![0.0; d];
        for i in (0..ids.len()).rev() {
            h = self.gru("encoder.bwd", &embs[i], &h);
            bwd[i] = h.clone();
        }
        let states = fwd.iter().zip(&bwd).map(|(f, b)| cat(&[f, b])).collect();
        (states, bwd[0].clone())
    }

    pub fn init(&self, backward_first: &[f64]) -> Vec<f64> {
        self.affine("decoder.init.w_d", "decoder.init.b_d", backward_first)
            .into_iter()
            .map(f64::tanh)
            .collect()
    }

    pub fn pointer_scores(&self, query: &[f64], states: &[Vec<f64>], w: &str, u: &str, v: &str) -> Vec<f64> {
        let wq = self.mv(w, query);
        let va = self.vec(v);
        states
            .iter()
            .map(|h| {
                let uh = self.mv(u, h);
                (0..wq.len()).map(|k| va[k] * (wq[k] + uh[k]).tanh()).sum()
            })
            .collect()
    }

    fn weighted(&self, weights: &[f64], states: &[Vec<f64>]) -> Vec<f64> {
        let mut c = vec![0.0; states[0].len()];
        for (w, h) in weights.iter().zip(states) {
            for k in 0..c.len() {
                c[k] += w * h[k];
            }
        }
        c
    }

    pub fn step(&self, s_prev: &[f64], c_prev: &[f64], y_prev: usize, states: &[Vec<f64>]) -> Step {
        let emb = self.row("decoder.tgt_emb", y_prev);
        let s = self.gru("decoder.gru", &cat(&[&emb, c_prev]), s_prev);
        let scores = self.pointer_scores(&s, states, "decoder.attn.w_a", "decoder.attn.u_a", "decoder.attn.v_a");
        let alpha = softmax(&scores);
        let c = self.weighted(&alpha, states);
        Step { emb, s, alpha, c }
    }

    pub fn word_probs(&self, emb: &[f64], s: &[f64], c: &[f64]) -> Vec<f64> {
        let a = self.mv("decoder.readout.w_r", emb);
        let b = self.mv("decoder.readout.u_r", c);
        let v = self.mv("decoder.readout.v_r", s);
        let r: Vec<f64> = (0..a.len()).map(|i| a[i] + b[i] + v[i]).collect();
        let mo: Vec<f64> = (0..r.len() / 2).map(|j| r[2 * j].max(r[2 * j + 1])).collect();
        softmax(&self.mv("decoder.out.w_o", &mo))
    }

    pub fn p_copy(&self, m: &[f64]) -> f64 {
        let hidden: Vec<f64> = self
            .affine("copy.gate.w_1", "copy.gate.b_1", m)
            .into_iter()
            .map(f64::tanh)
            .collect();
        sigmoid(self.affine("copy.gate.w_2", "copy.gate.b_2", &hidden)[0])
    }

    pub fn start_weights(&self, m: &[f64], states: &[Vec<f64>]) -> Vec<f64> {
        let q: Vec<f64> = self
            .affine("copy.start.w_s", "copy.start.b_s", m)
            .into_iter()
            .map(f64::tanh)
            .collect();
        softmax(&self.pointer_scores(&q, states, "copy.pointer.w_p", "copy.pointer.u_p", "copy.pointer.v_p"))
    }

    /// End distribution for `start`, zero outside `[start, start + max_len)`.
    pub fn end_weights(&self, m: &[f64], states: &[Vec<f64>], start: usize, max_len: usize) -> Vec<f64> {
        let ws = self.start_weights(m, states);
        let cs = self.weighted(&ws, states);
        let cst: Vec<f64> = self
            .affine("copy.transducer.w_e", "copy.transducer.b_e", m)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let qe = self.gru("copy.transducer.gru", &cs, &cst);
        let scores = self.pointer_scores(&qe, states, "copy.pointer.w_p", "copy.pointer.u_p", "copy.pointer.v_p");
        let hi = (start + max_len).min(states.len());
        let window = softmax(&scores[start..hi]);
        let mut out = vec![0.0; states.len()];
        out[start..hi].copy_from_slice(&window);
        out
    }

    /// Teacher-forced loss over `y` (ending in end-of-sentence) with spans
    /// given as `(tgt_start, tgt_end, src_start, src_end)`.
    pub fn loss(&self, x: &[usize], y: &[usize], spans: &[(usize, usize, usize, usize)]) -> f64 {
        let max_len = self.model.hyper.max_copy_len;
        let (states, bf) = self.encode(x);
        let mut s = self.init(&bf);
        let mut c = vec![0.0; states[0].len()];
        let mut prev = 1;
        let mut total = 0.0;
        for t in 0..y.len() {
            let st = self.step(&s, &c, prev, &states);
            let m = st.memory();
            if let Some(&(_, _, a, b)) = spans.iter().find(|sp| sp.0 == t) {
                let pc = self.p_copy(&m);
                let ps = self.start_weights(&m, &states)[a];
                let pe = self.end_weights(&m, &states, a, max_len)[b];
                total -= (pc * ps * pe).ln();
            } else if !spans.iter().any(|sp| sp.0 < t && t <= sp.1) {
                let pg = 1.0 - self.p_copy(&m);
                total -= (pg * self.word_probs(&st.emb, &st.s, &st.c)[y[t]]).ln();
            }
            s = st.s;
            c = st.c;
            prev = y[t];
        }
        total
    }
}
