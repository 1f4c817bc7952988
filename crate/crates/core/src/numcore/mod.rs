//! Numeric substrate: dense tensors, named parameter storage, initialization,
//! the optimizer, gradient clipping, dropout and a finite-difference checker.
//!
//! All training arithmetic is done in `f64`. Randomness comes from
//! [`RngState`], a ChaCha8 stream seeded from a single `u64`; Gaussian draws
//! use `rand_distr::StandardNormal` and uniform draws use `rand`'s `[0, 1)`
//! `f64` sampler, so a seed fixes every draw for a given build.

mod graph;

pub use graph::{Graph, Var};

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    graph::masked_softmax(x, None)
}

/// Softmax restricted to positions where `mask` is true; the rest get 0.
pub fn masked_softmax(x: &[f64], mask: &[bool]) -> Vec<f64> {
    graph::masked_softmax(x, Some(mask))
}

pub(crate) use graph::{sigmoid, softplus};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense row-major tensor of rank 1 or 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {} at index {}",
                data[pos], pos
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.fill(value);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    /// Row `i` of a matrix (or the single element of a vector).
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::InvalidShape(format!(
            "expected 1 or 2 dimensions, got {:?}",
            shape
        )));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape(format!(
            "zero-sized dimension in {:?}",
            shape
        )));
    }
    Ok(())
}

/// Handle to one entry of a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    adam_m: Tensor,
    adam_v: Tensor,
}

/// Named parameters with paired gradient and Adam moment buffers.
///
/// Entries keep insertion order, which fixes the checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    step_count: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        let zeros = Tensor::zeros(value.shape())?;
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// `(id, name, value)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data.fill(0.0);
        }
    }

    /// Adds `scale * grads` into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (e, g) in self.entries.iter_mut().zip(&grads.bufs) {
            for (dst, src) in e.grad.data.iter_mut().zip(g) {
                *dst += scale * src;
            }
        }
    }
}

/// Sparse-by-parameter gradient accumulator aligned with a [`ParameterStore`].
///
/// A buffer stays empty until some op writes to that parameter.
#[derive(Clone, Debug)]
pub struct Gradients {
    bufs: Vec<Vec<f64>>,
    sizes: Vec<usize>,
}

impl Gradients {
    pub fn for_store(store: &ParameterStore) -> Self {
        Self {
            bufs: vec![Vec::new(); store.len()],
            sizes: store.entries.iter().map(|e| e.value.len()).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        let b = &self.bufs[id.0];
        if b.is_empty() {
            None
        } else {
            Some(b)
        }
    }

    pub(crate) fn buf_mut(&mut self, id: ParamId) -> &mut [f64] {
        let b = &mut self.bufs[id.0];
        if b.is_empty() {
            b.resize(self.sizes[id.0], 0.0);
        }
        b
    }

    pub fn clear(&mut self) {
        for b in &mut self.bufs {
            b.clear();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.alpha > 0.0) || !unit(self.beta1) || !unit(self.beta2) || !(self.epsilon > 0.0)
        {
            return Err(Error::InvalidArgument(format!("bad Adam config {:?}", self)));
        }
        Ok(())
    }
}

/// Seeded ChaCha8 generator.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `(seed, stream)`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }
}

/// Xavier (Glorot) Gaussian initialization: mean 0, variance
/// `2 / (fan_in + fan_out)`. A matrix of shape `(rows, cols)` maps `cols`
/// inputs to `rows` outputs; a vector uses its length for both fans.
pub fn xavier_init(shape: &[usize], rng: &mut RngState) -> Result<Tensor> {
    validate_shape(shape)?;
    let (fan_in, fan_out) = match shape {
        [n] => (*n, *n),
        [rows, cols] => (*cols, *rows),
        _ => unreachable!(),
    };
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * rng.standard_normal()).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Element-wise clamp of every gradient component to `[-bound, bound]`.
pub fn clip_gradients(store: &mut ParameterStore, bound: f64) -> Result<()> {
    if !(bound > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip bound must be positive, got {bound}"
        )));
    }
    for e in &mut store.entries {
        for g in e.grad.data.iter_mut() {
            *g = g.clamp(-bound, bound);
        }
    }
    Ok(())
}

/// One bias-corrected Adam update over every parameter; gradients are
/// zeroed afterwards.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    for e in &store.entries {
        if e.grad.shape != e.value.shape
            || e.adam_m.shape != e.value.shape
            || e.adam_v.shape != e.value.shape
        {
            return Err(Error::Internal(format!(
                "buffers of {} disagree on shape",
                e.name
            )));
        }
    }
    store.step_count += 1;
    let t = store.step_count as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for e in &mut store.entries {
        let Entry {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = e;
        for (((theta, g), m), v) in value
            .data
            .iter_mut()
            .zip(grad.data.iter_mut())
            .zip(adam_m.data.iter_mut())
            .zip(adam_v.data.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * *g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
            *g = 0.0;
        }
    }
    Ok(())
}

/// Inverted dropout mask: entries are 0 with probability `p` and
/// `1 / (1 - p)` otherwise. Outside training every entry is 1.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut RngState, training: bool) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    let mut t = Tensor::filled(shape, 1.0)?;
    if training && p > 0.0 {
        let keep = 1.0 / (1.0 - p);
        for v in t.data.iter_mut() {
            *v = if rng.uniform() < p { 0.0 } else { keep };
        }
    }
    Ok(t)
}

/// Result of [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub components: usize,
}

/// Compares the analytic gradients held in `store` with central finite
/// differences of `loss` at step `epsilon`.
///
/// The relative error of one component is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn check_gradients<F>(mut loss: F, store: &mut ParameterStore, epsilon: f64) -> Result<GradCheck>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let first = loss(store)?;
    let second = loss(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        components: 0,
    };
    for i in 0..store.entries.len() {
        for k in 0..store.entries[i].value.data.len() {
            let orig = store.entries[i].value.data[k];
            store.entries[i].value.data[k] = orig + epsilon;
            let plus = loss(store)?;
            store.entries[i].value.data[k] = orig - epsilon;
            let minus = loss(store)?;
            store.entries[i].value.data[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = store.entries[i].grad.data[k];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.components += 1;
            if report.components == 1 || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.entries[i].name.clone();
                report.worst_index = k;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
