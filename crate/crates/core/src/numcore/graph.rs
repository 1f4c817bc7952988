//! Reverse-mode differentiation over the handful of vector ops the model uses.
//!
//! A [`Graph`] borrows a [`ParameterStore`] read-only, records every op in
//! evaluation order and, on [`Graph::backward`], accumulates parameter
//! gradients into a separate [`Gradients`] buffer. Shapes are checked with
//! assertions here; public model functions validate user input before
//! building a graph.

use super::{Gradients, ParamId, ParameterStore};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Embed { param: ParamId, row: usize },
    MatVec { param: ParamId, x: Var },
    AddBias { x: Var, param: ParamId },
    Add(Var, Var),
    Mul(Var, Var),
    MulConst { x: Var, mask: Vec<f64> },
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Maxout(Var),
    /// `e_i = v . tanh(query + key_i)`; `act` keeps the tanh activations.
    Scores {
        query: Var,
        keys: Vec<Var>,
        v: ParamId,
        act: Vec<f64>,
    },
    Softmax(Var),
    WeightedSum { w: Var, xs: Vec<Var> },
    /// `log softmax(x)[idx]` over the unmasked support; `probs` is that softmax.
    LogSoftmaxAt { x: Var, idx: usize, probs: Vec<f64> },
    /// `log sigmoid(sign * x)` of a scalar.
    LogSigmoid { x: Var, sign: f64 },
    Sum(Vec<Var>),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation over parameters borrowed from a store.
pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Softmax over the positions where `mask` is true (all when `None`).
/// Masked positions get exactly zero weight.
pub(crate) fn masked_softmax(x: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let on = |i: usize| mask.map_or(true, |m| m[i]);
    let max = x
        .iter()
        .enumerate()
        .filter(|(i, _)| on(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "softmax over an empty or non-finite support");
    let mut out: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| if on(i) { (v - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    out
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        assert_eq!(val.len(), 1, "node is not a scalar");
        val[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Row `row` of an embedding table.
    pub fn embed(&mut self, param: ParamId, row: usize) -> Var {
        let t = self.store.value(param);
        assert!(row < t.rows(), "embedding row {row} out of range");
        let value = t.row(row).to_vec();
        self.push(value, Op::Embed { param, row }, true)
    }

    /// `W x` for a matrix parameter `W`.
    pub fn matvec(&mut self, param: ParamId, x: Var) -> Var {
        let w = self.store.value(param);
        let xv = &self.nodes[x.0].value;
        assert_eq!(
            w.cols(),
            xv.len(),
            "matvec {}: {:?} x {}",
            self.store.name(param),
            w.shape(),
            xv.len()
        );
        let value = (0..w.rows()).map(|r| dot(w.row(r), xv)).collect();
        self.push(value, Op::MatVec { param, x }, true)
    }

    pub fn add_bias(&mut self, x: Var, param: ParamId) -> Var {
        let b = self.store.value(param).data();
        let xv = &self.nodes[x.0].value;
        assert_eq!(b.len(), xv.len(), "bias {}", self.store.name(param));
        let value = xv.iter().zip(b).map(|(a, b)| a + b).collect();
        self.push(value, Op::AddBias { x, param }, true)
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: ParamId, x: Var, b: ParamId) -> Var {
        let y = self.matvec(w, x);
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len());
        let value = av.iter().zip(bv).map(|(x, y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len());
        let value = av.iter().zip(bv).map(|(x, y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Element-wise product with a constant (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), mask.len());
        let value = xv.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let ng = self.ng(x);
        self.push(value, Op::MulConst { x, mask }, ng)
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.iter().map(|v| 1.0 - v).collect();
        let ng = self.ng(x);
        self.push(value, Op::OneMinus(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        let ng = self.ng(x);
        self.push(value, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.iter().map(|&v| sigmoid(v)).collect();
        let ng = self.ng(x);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::with_capacity(parts.iter().map(|p| self.nodes[p.0].value.len()).sum());
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::Concat(parts.to_vec()), ng)
    }

    /// Max over consecutive pairs; the first element wins ties.
    pub fn maxout(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        assert!(xv.len() % 2 == 0, "maxout needs an even length");
        let value = xv.chunks_exact(2).map(|p| p[0].max(p[1])).collect();
        let ng = self.ng(x);
        self.push(value, Op::Maxout(x), ng)
    }

    /// Additive attention scores `v . tanh(query + key_i)` for every key.
    pub fn scores(&mut self, query: Var, keys: &[Var], v: ParamId) -> Var {
        let vv = self.store.value(v).data();
        let qv = &self.nodes[query.0].value;
        let a = qv.len();
        assert_eq!(vv.len(), a, "score vector {}", self.store.name(v));
        let mut act = Vec::with_capacity(a * keys.len());
        let mut value = Vec::with_capacity(keys.len());
        for k in keys {
            let kv = &self.nodes[k.0].value;
            assert_eq!(kv.len(), a);
            let start = act.len();
            act.extend(qv.iter().zip(kv).map(|(q, k)| (q + k).tanh()));
            value.push(dot(&act[start..], vv));
        }
        self.push(
            value,
            Op::Scores {
                query,
                keys: keys.to_vec(),
                v,
                act,
            },
            true,
        )
    }

    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Var {
        let value = masked_softmax(&self.nodes[x.0].value, mask);
        let ng = self.ng(x);
        self.push(value, Op::Softmax(x), ng)
    }

    /// `sum_i w_i * xs_i`.
    pub fn weighted_sum(&mut self, w: Var, xs: &[Var]) -> Var {
        let wv = &self.nodes[w.0].value;
        assert_eq!(wv.len(), xs.len());
        let dim = self.nodes[xs[0].0].value.len();
        let mut value = vec![0.0; dim];
        for (wi, x) in wv.iter().zip(xs) {
            axpy(*wi, &self.nodes[x.0].value, &mut value);
        }
        let ng = self.ng(w) || xs.iter().any(|&x| self.ng(x));
        self.push(
            value,
            Op::WeightedSum {
                w,
                xs: xs.to_vec(),
            },
            ng,
        )
    }

    /// `log softmax(x)[idx]` restricted to the masked support.
    pub fn log_softmax_at(&mut self, x: Var, idx: usize, mask: Option<&[bool]>) -> Var {
        let xv = &self.nodes[x.0].value;
        assert!(idx < xv.len() && mask.map_or(true, |m| m[idx]));
        let probs = masked_softmax(xv, mask);
        let max = xv
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.map_or(true, |m| m[*i]))
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + xv.iter()
                .enumerate()
                .filter(|(i, _)| mask.map_or(true, |m| m[*i]))
                .map(|(_, v)| (v - max).exp())
                .sum::<f64>()
                .ln();
        let value = vec![xv[idx] - lse];
        let ng = self.ng(x);
        self.push(value, Op::LogSoftmaxAt { x, idx, probs }, ng)
    }

    /// `log sigmoid(x)` of a scalar node.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.log_sigmoid_signed(x, 1.0)
    }

    /// `log(1 - sigmoid(x))`, i.e. `log sigmoid(-x)`.
    pub fn log_one_minus_sigmoid(&mut self, x: Var) -> Var {
        self.log_sigmoid_signed(x, -1.0)
    }

    fn log_sigmoid_signed(&mut self, x: Var, sign: f64) -> Var {
        let v = self.scalar(x);
        let value = vec![-softplus(-sign * v)];
        let ng = self.ng(x);
        self.push(value, Op::LogSigmoid { x, sign }, ng)
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let value = vec![xs.iter().map(|&x| self.scalar(x)).sum()];
        let ng = xs.iter().any(|&x| self.ng(x));
        self.push(value, Op::Sum(xs.to_vec()), ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, c), ng)
    }

    /// Back-propagates `seed * d(root)/d(params)` into `grads`; `root` must
    /// be a scalar node.
    pub fn backward(&self, root: Var, seed: f64, grads: &mut Gradients) {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward from a non-scalar");
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); root.0 + 1];
        g[root.0] = vec![seed];
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if g[i].is_empty() || !node.needs_grad {
                continue;
            }
            let gi = std::mem::take(&mut g[i]);
            self.backprop_node(node, &gi, &mut g, grads);
        }
    }

    fn backprop_node(&self, node: &Node, gi: &[f64], g: &mut [Vec<f64>], grads: &mut Gradients) {
        let nodes = &self.nodes;
        fn slot<'a>(g: &'a mut [Vec<f64>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            let s = &mut g[v.0];
            if s.is_empty() {
                s.resize(nodes[v.0].value.len(), 0.0);
            }
            Some(s)
        }
        match &node.op {
            Op::Leaf => {}
            Op::Embed { param, row } => {
                let cols = self.store.value(*param).cols();
                let buf = grads.buf_mut(*param);
                axpy(1.0, gi, &mut buf[row * cols..(row + 1) * cols]);
            }
            Op::MatVec { param, x } => {
                let w = self.store.value(*param);
                let cols = w.cols();
                let xv = &nodes[x.0].value;
                {
                    let buf = grads.buf_mut(*param);
                    for (r, &gr) in gi.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(gr, xv, &mut buf[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                if let Some(dx) = slot(g, nodes, *x) {
                    for (r, &gr) in gi.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(gr, w.row(r), dx);
                        }
                    }
                }
            }
            Op::AddBias { x, param } => {
                axpy(1.0, gi, grads.buf_mut(*param));
                if let Some(dx) = slot(g, nodes, *x) {
                    axpy(1.0, gi, dx);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = slot(g, nodes, *v) {
                        axpy(1.0, gi, d);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = slot(g, nodes, *a) {
                    for ((d, gv), bv) in da.iter_mut().zip(gi).zip(&nodes[b.0].value) {
                        *d += gv * bv;
                    }
                }
                if let Some(db) = slot(g, nodes, *b) {
                    for ((d, gv), av) in db.iter_mut().zip(gi).zip(&nodes[a.0].value) {
                        *d += gv * av;
                    }
                }
            }
            Op::MulConst { x, mask } => {
                if let Some(dx) = slot(g, nodes, *x) {
                    for ((d, gv), m) in dx.iter_mut().zip(gi).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::OneMinus(x) => {
                if let Some(dx) = slot(g, nodes, *x) {
                    axpy(-1.0, gi, dx);
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = slot(g, nodes, *x) {
                    for ((d, gv), y) in dx.iter_mut().zip(gi).zip(&node.value) {
                        *d += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = slot(g, nodes, *x) {
                    for ((d, gv), y) in dx.iter_mut().zip(gi).zip(&node.value) {
                        *d += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    if let Some(dp) = slot(g, nodes, *p) {
                        axpy(1.0, &gi[off..off + n], dp);
                    }
                    off += n;
                }
            }
            Op::Maxout(x) => {
                let xv = &nodes[x.0].value;
                if let Some(dx) = slot(g, nodes, *x) {
                    for (j, gv) in gi.iter().enumerate() {
                        let k = if xv[2 * j] >= xv[2 * j + 1] { 2 * j } else { 2 * j + 1 };
                        dx[k] += gv;
                    }
                }
            }
            Op::Scores { query, keys, v, act } => {
                let vv = self.store.value(*v).data();
                let a = vv.len();
                {
                    let dv = grads.buf_mut(*v);
                    for (i, gv) in gi.iter().enumerate() {
                        if *gv != 0.0 {
                            axpy(*gv, &act[i * a..(i + 1) * a], dv);
                        }
                    }
                }
                let mut dq = vec![0.0; a];
                let mut pre = vec![0.0; a];
                for (i, (gv, k)) in gi.iter().zip(keys).enumerate() {
                    if *gv == 0.0 {
                        continue;
                    }
                    let ai = &act[i * a..(i + 1) * a];
                    for ((p, vj), aj) in pre.iter_mut().zip(vv).zip(ai) {
                        *p = gv * vj * (1.0 - aj * aj);
                    }
                    axpy(1.0, &pre, &mut dq);
                    if let Some(dk) = slot(g, nodes, *k) {
                        axpy(1.0, &pre, dk);
                    }
                }
                if let Some(d) = slot(g, nodes, *query) {
                    axpy(1.0, &dq, d);
                }
            }
            Op::Softmax(x) => {
                if let Some(dx) = slot(g, nodes, *x) {
                    let w = &node.value;
                    let inner = dot(w, gi);
                    for ((d, wi), gv) in dx.iter_mut().zip(w).zip(gi) {
                        *d += wi * (gv - inner);
                    }
                }
            }
            Op::WeightedSum { w, xs } => {
                if self.nodes[w.0].needs_grad {
                    let dw: Vec<f64> = xs.iter().map(|x| dot(&nodes[x.0].value, gi)).collect();
                    if let Some(d) = slot(g, nodes, *w) {
                        axpy(1.0, &dw, d);
                    }
                }
                let wv = &nodes[w.0].value;
                for (wi, x) in wv.iter().zip(xs) {
                    if *wi == 0.0 {
                        continue;
                    }
                    if let Some(dx) = slot(g, nodes, *x) {
                        axpy(*wi, gi, dx);
                    }
                }
            }
            Op::LogSoftmaxAt { x, idx, probs } => {
                if let Some(dx) = slot(g, nodes, *x) {
                    let gv = gi[0];
                    for (j, (d, p)) in dx.iter_mut().zip(probs).enumerate() {
                        let delta = if j == *idx { 1.0 } else { 0.0 };
                        *d += gv * (delta - p);
                    }
                }
            }
            Op::LogSigmoid { x, sign } => {
                let xv = nodes[x.0].value[0];
                if let Some(dx) = slot(g, nodes, *x) {
                    dx[0] += gi[0] * sign * sigmoid(-sign * xv);
                }
            }
            Op::Sum(xs) => {
                for x in xs {
                    if let Some(d) = slot(g, nodes, *x) {
                        d[0] += gi[0];
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = slot(g, nodes, *x) {
                    axpy(*c, gi, dx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngState;

    fn store() -> (ParameterStore, ParamId, ParamId, ParamId) {
        let mut s = ParameterStore::new();
        let mut rng = RngState::new(11);
        let w = s
            .insert("w", crate::numcore::xavier_init(&[4, 3], &mut rng).unwrap())
            .unwrap();
        let b = s
            .insert("b", crate::numcore::xavier_init(&[4], &mut rng).unwrap())
            .unwrap();
        let v = s
            .insert("v", crate::numcore::xavier_init(&[4], &mut rng).unwrap())
            .unwrap();
        (s, w, b, v)
    }

    /// Scalar loss exercising every op kind.
    fn build(g: &mut Graph<'_>, w: ParamId, b: ParamId, v: ParamId) -> Var {
        let x = g.input(vec![0.3, -0.7, 1.1]);
        let h = g.affine(w, x, b);
        let t = g.tanh(h);
        let s = g.sigmoid(h);
        let m = g.mul(t, s);
        let om = g.one_minus(s);
        let a = g.add(m, om);
        let dm = g.mul_const(a, vec![1.0, 0.0, 2.0, 1.0]);
        let cat = g.concat(&[dm, t]);
        let mo = g.maxout(cat);
        let k1 = g.matvec(w, x);
        let keys = [mo, k1, t];
        let sc = g.scores(s, &keys, v);
        let sm = g.softmax(sc, None);
        let ctx = g.weighted_sum(sm, &keys);
        let lsm = g.log_softmax_at(ctx, 2, Some(&[true, false, true, true]));
        let gate = g.scale(sc, 0.5);
        let one = g.log_softmax_at(gate, 0, None);
        let ls = g.log_sigmoid(lsm);
        let lo = g.log_one_minus_sigmoid(one);
        g.sum(&[ls, lo, lsm])
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let (mut s, w, b, v) = store();
        let mut grads = Gradients::for_store(&s);
        {
            let mut g = Graph::new(&s);
            let root = build(&mut g, w, b, v);
            g.backward(root, 1.0, &mut grads);
        }
        s.zero_grads();
        s.accumulate(&grads, 1.0);
        let report = crate::numcore::check_gradients(
            |st| {
                let mut g = Graph::new(st);
                let r = build(&mut g, w, b, v);
                Ok(g.scalar(r))
            },
            &mut s,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn masked_softmax_zeroes_masked() {
        let p = masked_softmax(&[1.0, 5.0, 2.0], Some(&[true, false, true]));
        assert_eq!(p[1], 0.0);
        assert!((p[0] + p[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = masked_softmax(&[0.1, -2.0, 3.0], None);
        let b = masked_softmax(&[100.1, 98.0, 103.0], None);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sigmoid_is_stable() {
        let s = ParameterStore::new();
        let mut g = Graph::new(&s);
        let x = g.input(vec![1000.0]);
        let a = g.log_sigmoid(x);
        let b = g.log_one_minus_sigmoid(x);
        assert_eq!(g.scalar(a), 0.0);
        assert!((g.scalar(b) + 1000.0).abs() < 1e-9);
    }
}
