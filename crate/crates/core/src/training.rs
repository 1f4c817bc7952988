//! Teacher-forced loss with mixed generate/copy supervision and the
//! mini-batch training loop.
//!
//! At each target step the decoder consumes the gold previous token. A step
//! that starts a gold span is charged `-log(p_c p_start p_end)`; a step inside
//! a span (after its first token) is charged nothing but still advances the
//! decoder; every other step is charged `-log(p_g p(y_t))`.

use std::fmt;

use crate::copymod::{end_mask, gate_logit_graph, span_graph};
use crate::decoder::{init_graph, logits_graph, step_graph};
use crate::encoder::encode_graph;
use crate::error::{Error, Result};
use crate::evalmetrics::rouge_n;
use crate::model::{Model, SourceVars};
use crate::numcore::{
    adam_step, clip_gradients, dropout_mask, AdamConfig, Gradients, Graph, ParameterStore, RngState,
    Var,
};
use crate::search::{greedy_decode, Source};
use crate::spanoracle::{CopySpan, TrainingInstance, BOS, DEFAULT_MAX_COPY_LEN};

/// Development-set criterion used for learning-rate decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DevMetric {
    /// Mean teacher-forced loss; lower is better.
    Loss,
    /// ROUGE-2 F1 of greedy output against the gold target ids; higher is better.
    Rouge2,
}

impl DevMetric {
    pub fn higher_is_better(self) -> bool {
        matches!(self, DevMetric::Rouge2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Element-wise gradient clip bound.
    pub clip: f64,
    pub dropout_p: f64,
    /// Batches between development evaluations.
    pub eval_every: usize,
    /// Consecutive non-improving evaluations before the learning rate halves.
    pub decay_patience: usize,
    pub max_copy_len: usize,
    pub seed: u64,
    /// Upper bound on optimizer steps.
    pub max_steps: usize,
    pub max_epochs: usize,
    pub dev_metric: DevMetric,
    /// Step cap for greedy decoding when the dev metric needs it.
    pub dev_decode_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 0.001,
            clip: 5.0,
            dropout_p: 0.4,
            eval_every: 2000,
            decay_patience: 6,
            max_copy_len: DEFAULT_MAX_COPY_LEN,
            seed: 1,
            max_steps: usize::MAX,
            max_epochs: 20,
            dev_metric: DevMetric::Loss,
            dev_decode_steps: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if self.eval_every == 0 || self.decay_patience == 0 || self.max_copy_len == 0 {
            return bad("eval_every, decay_patience and max_copy_len must be positive");
        }
        if self.dev_decode_steps == 0 {
            return bad("dev_decode_steps must be positive");
        }
        Ok(())
    }
}

/// Per-instance loss split by supervision type.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub gen_term: f64,
    pub copy_term: f64,
    pub generated_steps: usize,
    pub copy_spans: usize,
    /// Steps inside a span after its first token.
    pub interior_steps: usize,
}

/// Dropout setting for one loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub training: bool,
    pub dropout_p: f64,
}

impl LossOptions {
    pub fn eval() -> Self {
        Self {
            training: false,
            dropout_p: 0.0,
        }
    }

    pub fn train(dropout_p: f64) -> Self {
        Self {
            training: true,
            dropout_p,
        }
    }
}

enum StepKind<'a> {
    Generate,
    SpanStart(&'a CopySpan),
    Interior,
}

fn check_instance(model: &Model, inst: &TrainingInstance) -> Result<()> {
    inst.validate(model.hyper.max_copy_len)?;
    let bad = |msg: String| Err(Error::InvalidInstance(msg));
    if let Some(&id) = inst.x.iter().find(|&&id| id >= model.hyper.src_vocab_size) {
        return bad(format!("source id {id} outside the source vocabulary"));
    }
    if let Some(&id) = inst.y.iter().find(|&&id| id >= model.hyper.tgt_vocab_size) {
        return bad(format!("target id {id} outside the target vocabulary"));
    }
    Ok(())
}

struct LossGraph {
    loss: Var,
    breakdown: LossBreakdown,
}

fn build_loss(
    g: &mut Graph<'_>,
    model: &Model,
    inst: &TrainingInstance,
    rng: &mut RngState,
    opts: LossOptions,
) -> Result<LossGraph> {
    check_instance(model, inst)?;
    let h = &model.hyper;
    let (e, d) = (h.emb_size, h.hidden_size);
    let drop = opts.training && opts.dropout_p > 0.0;
    let mut mask = |len: usize| -> Result<Option<Vec<f64>>> {
        if drop {
            Ok(Some(dropout_mask(&[len], opts.dropout_p, rng, true)?.into_data()))
        } else {
            Ok(None)
        }
    };

    let enc_masks = if drop {
        let mut v = Vec::with_capacity(inst.x.len());
        for _ in &inst.x {
            v.push(mask(e)?.expect("dropout enabled"));
        }
        Some(v)
    } else {
        None
    };
    let enc = encode_graph(g, &model.params.encoder, &inst.x, enc_masks);
    let n = enc.states.len();
    let src = SourceVars::from_states(g, model, enc.states);
    let mut s = init_graph(g, model, enc.backward_first);
    let mut c = g.input(vec![0.0; 2 * d]);

    let mut kinds: Vec<StepKind<'_>> = (0..inst.y.len()).map(|_| StepKind::Generate).collect();
    for span in &inst.spans {
        kinds[span.tgt_start] = StepKind::SpanStart(span);
        for k in kinds.iter_mut().take(span.tgt_end + 1).skip(span.tgt_start + 1) {
            *k = StepKind::Interior;
        }
    }

    let mut gen_terms = Vec::new();
    let mut copy_terms = Vec::new();
    let mut breakdown = LossBreakdown::default();
    let mut prev = BOS;
    for (t, kind) in kinds.iter().enumerate() {
        let input_mask = mask(e)?;
        let step = step_graph(g, model, s, c, prev, &src, input_mask);
        s = step.s;
        c = step.c;
        prev = inst.y[t];
        if let StepKind::Interior = kind {
            breakdown.interior_steps += 1;
            continue;
        }
        let (mut emb_m, mut s_m, mut c_m) = (step.emb, step.s, step.c);
        if let Some(mm) = mask(e + 3 * d)? {
            emb_m = g.mul_const(emb_m, mm[..e].to_vec());
            s_m = g.mul_const(s_m, mm[e..e + d].to_vec());
            c_m = g.mul_const(c_m, mm[e + d..].to_vec());
        }
        let m = g.concat(&[emb_m, s_m, c_m]);
        let gate = gate_logit_graph(g, model, m);
        match kind {
            StepKind::Generate => {
                let logits = logits_graph(g, model, emb_m, s_m, c_m);
                let lp = g.log_softmax_at(logits, inst.y[t], None);
                let lg = g.log_one_minus_sigmoid(gate);
                gen_terms.push(lg);
                gen_terms.push(lp);
                breakdown.generated_steps += 1;
            }
            StepKind::SpanStart(span) => {
                let sv = span_graph(g, model, m, &src);
                let lc = g.log_sigmoid(gate);
                let ls = g.log_softmax_at(sv.start_scores, span.src_start, None);
                let window = end_mask(n, span.src_start, h.max_copy_len);
                let le = g.log_softmax_at(sv.end_scores, span.src_end, Some(&window));
                copy_terms.push(lc);
                copy_terms.push(ls);
                copy_terms.push(le);
                breakdown.copy_spans += 1;
            }
            StepKind::Interior => unreachable!(),
        }
    }
    breakdown.gen_term = -gen_terms.iter().map(|&v| g.scalar(v)).sum::<f64>();
    breakdown.copy_term = -copy_terms.iter().map(|&v| g.scalar(v)).sum::<f64>();
    let all: Vec<Var> = gen_terms.into_iter().chain(copy_terms).collect();
    let ll = g.sum(&all);
    let loss = g.scale(ll, -1.0);
    breakdown.total = g.scalar(loss);
    Ok(LossGraph { loss, breakdown })
}

/// Teacher-forced negative log-likelihood of one instance.
pub fn instance_loss(
    model: &Model,
    inst: &TrainingInstance,
    rng: &mut RngState,
    opts: LossOptions,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.store);
    Ok(build_loss(&mut g, model, inst, rng, opts)?.breakdown)
}

/// Evaluation-mode loss with `store` in place of the model's own weights.
/// `store` must have the model's layout.
pub fn instance_loss_at(model: &Model, store: &ParameterStore, inst: &TrainingInstance) -> Result<f64> {
    let mut g = Graph::new(store);
    let mut rng = RngState::new(0);
    Ok(build_loss(&mut g, model, inst, &mut rng, LossOptions::eval())?.breakdown.total)
}

/// Like [`instance_loss`], and adds `scale * d(loss)/d(params)` into `grads`.
pub fn instance_loss_grad(
    model: &Model,
    inst: &TrainingInstance,
    rng: &mut RngState,
    opts: LossOptions,
    grads: &mut Gradients,
    scale: f64,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.store);
    let lg = build_loss(&mut g, model, inst, rng, opts)?;
    g.backward(lg.loss, scale, grads);
    Ok(lg.breakdown)
}

/// Evaluates `model` on `instances` without dropout and writes the mean
/// loss gradient into the store's gradient buffers. Returns the mean loss.
pub fn batch_gradient(model: &mut Model, instances: &[TrainingInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let mut grads = Gradients::for_store(&model.store);
    let scale = 1.0 / instances.len() as f64;
    let mut total = 0.0;
    let mut rng = RngState::new(0);
    for inst in instances {
        total += instance_loss_grad(model, inst, &mut rng, LossOptions::eval(), &mut grads, scale)?.total;
    }
    model.store.zero_grads();
    model.store.accumulate(&grads, 1.0);
    Ok(total * scale)
}

/// Mean evaluation-mode loss.
pub fn mean_loss(model: &Model, instances: &[TrainingInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("no instances to evaluate".into()));
    }
    let mut rng = RngState::new(0);
    let mut total = 0.0;
    for inst in instances {
        total += instance_loss(model, inst, &mut rng, LossOptions::eval())?.total;
    }
    Ok(total / instances.len() as f64)
}

/// Halves the learning rate after `patience` consecutive evaluations that
/// fail to beat the best value seen so far.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    patience: usize,
    higher_is_better: bool,
    best: Option<f64>,
    bad: usize,
}

impl LrSchedule {
    pub fn new(patience: usize, higher_is_better: bool) -> Self {
        Self {
            patience,
            higher_is_better,
            best: None,
            bad: 0,
        }
    }

    /// Records one evaluation; returns `true` when `lr` was halved.
    pub fn observe(&mut self, metric: f64, lr: &mut f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(b) if self.higher_is_better => metric > b,
            Some(b) => metric < b,
        };
        if improved {
            self.best = Some(metric);
            self.bad = 0;
            return false;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            self.bad = 0;
            *lr *= 0.5;
            true
        } else {
            false
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// One development evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Learning rate in effect after this evaluation.
    pub lr: f64,
    /// Mean batch loss since the previous evaluation.
    pub train_loss: f64,
    pub dev_metric: f64,
}

impl fmt::Display for EvalRecord {
    /// `step<TAB>lr<TAB>train_loss<TAB>dev_metric`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{:.6}\t{:.6}",
            self.step, self.lr, self.train_loss, self.dev_metric
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub log: Vec<EvalRecord>,
    pub final_lr: f64,
}

fn dev_metric(model: &Model, cfg: &TrainConfig, dev: &[TrainingInstance]) -> Result<f64> {
    match cfg.dev_metric {
        DevMetric::Loss => mean_loss(model, dev),
        DevMetric::Rouge2 => {
            if dev.is_empty() {
                return Err(Error::EmptyInput("no development instances".into()));
            }
            let mut f1 = 0.0;
            for inst in dev {
                let src = Source::from_instance(inst);
                let hyp = greedy_decode(model, &src, cfg.dev_decode_steps, model.hyper.max_copy_len)?;
                let ids = hyp.target_ids(&src);
                f1 += rouge_n(&ids, &inst.y[..inst.y.len() - 1], 2).f1;
            }
            Ok(f1 / dev.len() as f64)
        }
    }
}

/// Mini-batch training: per batch, average the instance gradients, clip
/// element-wise, and take one Adam step. Every `eval_every` batches (and once
/// after the final batch) the development metric is computed, the learning
/// rate schedule is updated and `on_eval` receives the record and the model.
pub fn train<F>(
    cfg: &TrainConfig,
    train_set: &[TrainingInstance],
    dev_set: &[TrainingInstance],
    model: &mut Model,
    mut on_eval: F,
) -> Result<TrainSummary>
where
    F: FnMut(&EvalRecord, &Model) -> Result<()>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("empty training corpus".into()));
    }
    if dev_set.is_empty() {
        return Err(Error::EmptyInput("empty development corpus".into()));
    }
    if cfg.max_copy_len != model.hyper.max_copy_len {
        return Err(Error::InvalidArgument(format!(
            "max_copy_len {} differs from the model's {}",
            cfg.max_copy_len, model.hyper.max_copy_len
        )));
    }
    for inst in train_set.iter().chain(dev_set) {
        check_instance(model, inst)?;
    }

    let mut adam = AdamConfig {
        alpha: cfg.lr,
        ..AdamConfig::default()
    };
    let mut schedule = LrSchedule::new(cfg.decay_patience, cfg.dev_metric.higher_is_better());
    let mut shuffle_rng = RngState::derive(cfg.seed, 0);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grads = Gradients::for_store(&model.store);
    let mut log = Vec::new();
    let mut step = 0usize;
    let (mut loss_sum, mut loss_batches) = (0.0, 0usize);

    let mut evaluate = |step: usize,
                        loss_sum: &mut f64,
                        loss_batches: &mut usize,
                        adam: &mut AdamConfig,
                        model: &Model|
     -> Result<EvalRecord> {
        let metric = dev_metric(model, cfg, dev_set)?;
        schedule.observe(metric, &mut adam.alpha);
        let record = EvalRecord {
            step,
            lr: adam.alpha,
            train_loss: *loss_sum / (*loss_batches).max(1) as f64,
            dev_metric: metric,
        };
        *loss_sum = 0.0;
        *loss_batches = 0;
        Ok(record)
    };

    'epochs: for _epoch in 0..cfg.max_epochs {
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            if step >= cfg.max_steps {
                break 'epochs;
            }
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for (k, &idx) in batch.iter().enumerate() {
                let stream = 1 + (step * cfg.batch_size + k) as u64;
                let mut rng = RngState::derive(cfg.seed, stream);
                let b = instance_loss_grad(
                    model,
                    &train_set[idx],
                    &mut rng,
                    LossOptions::train(cfg.dropout_p),
                    &mut grads,
                    scale,
                )?;
                batch_loss += b.total * scale;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite batch loss at step {}",
                    step + 1
                )));
            }
            model.store.zero_grads();
            model.store.accumulate(&grads, 1.0);
            clip_gradients(&mut model.store, cfg.clip)?;
            adam_step(&mut model.store, &adam)?;
            step += 1;
            loss_sum += batch_loss;
            loss_batches += 1;
            if step % cfg.eval_every == 0 {
                let rec = evaluate(step, &mut loss_sum, &mut loss_batches, &mut adam, model)?;
                on_eval(&rec, model)?;
                log.push(rec);
            }
        }
    }
    if step > 0 && step % cfg.eval_every != 0 {
        let rec = evaluate(step, &mut loss_sum, &mut loss_batches, &mut adam, model)?;
        on_eval(&rec, model)?;
        log.push(rec);
    }
    Ok(TrainSummary {
        steps: step,
        log,
        final_lr: adam.alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tiny_hyper, Model};
    use crate::spanoracle::{Pair, Vocabulary, EOS};

    fn vocabs() -> (Vocabulary, Vocabulary) {
        let src = Vocabulary::from_entries(
            ["a", "b", "c", "d", "e", "f", "g", "h"].iter().map(|w| (*w, 1)),
        )
        .unwrap();
        let tgt = Vocabulary::from_entries(["a", "b", "x", "y", "z"].iter().map(|w| (*w, 1))).unwrap();
        (src, tgt)
    }

    fn instance(src: &str, tgt: &str) -> TrainingInstance {
        let (sv, tv) = vocabs();
        TrainingInstance::from_pair(&Pair::new(src, tgt), &sv, &tv, 3).unwrap()
    }

    #[test]
    fn loss_is_deterministic_and_consistent() {
        let m = Model::new(tiny_hyper(), 3).unwrap();
        let inst = instance("a c d b", "x c d y");
        assert_eq!(inst.spans.len(), 1);
        let mut rng = RngState::new(0);
        let a = instance_loss(&m, &inst, &mut rng, LossOptions::eval()).unwrap();
        let b = instance_loss(&m, &inst, &mut rng, LossOptions::eval()).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert!((a.total - a.gen_term - a.copy_term).abs() < 1e-9);
        assert!(a.total > 0.0);
        assert_eq!((a.generated_steps, a.copy_spans, a.interior_steps), (3, 1, 1));
    }

    #[test]
    fn dropout_changes_loss_only_in_training() {
        let m = Model::new(tiny_hyper(), 3).unwrap();
        let inst = instance("a c d b", "x c d y");
        let eval = instance_loss(&m, &inst, &mut RngState::new(1), LossOptions::eval()).unwrap();
        let tr = instance_loss(&m, &inst, &mut RngState::new(1), LossOptions::train(0.4)).unwrap();
        assert_ne!(eval.total, tr.total);
        let tr0 = instance_loss(&m, &inst, &mut RngState::new(1), LossOptions::train(0.0)).unwrap();
        assert_eq!(eval.total, tr0.total);
    }

    #[test]
    fn rejects_broken_instances() {
        let m = Model::new(tiny_hyper(), 3).unwrap();
        let mut inst = instance("a c d b", "x c d y");
        inst.spans[0].src_start = 0;
        inst.spans[0].src_end = 1;
        let err = instance_loss(&m, &inst, &mut RngState::new(0), LossOptions::eval()).unwrap_err();
        assert!(matches!(err, Error::InvalidInstance(_)));
        let mut inst = instance("a c d b", "x c d y");
        inst.x[0] = 500;
        assert!(instance_loss(&m, &inst, &mut RngState::new(0), LossOptions::eval()).is_err());
    }

    #[test]
    fn single_source_full_span_costs_only_the_gate() {
        let m = Model::new(tiny_hyper(), 9).unwrap();
        let (sv, tv) = vocabs();
        let inst = TrainingInstance {
            source: vec!["c".into()],
            target: vec!["c".into()],
            x: vec![sv.id("c").unwrap()],
            x_tgt: vec![tv.id_or_unk("c")],
            y: vec![tv.id_or_unk("c"), EOS],
            spans: vec![CopySpan {
                tgt_start: 0,
                tgt_end: 0,
                src_start: 0,
                src_end: 0,
            }],
        };
        let b = instance_loss(&m, &inst, &mut RngState::new(0), LossOptions::eval()).unwrap();
        // Copy term reduces to -log p_c at the first step.
        let mem = m.source_memory(&inst.x).unwrap();
        let st = crate::decoder::init_decoder(&m, &mem).unwrap();
        let (_, _, mv) = crate::decoder::decode_step(&m, &st, &mem, BOS).unwrap();
        let p_c = crate::copymod::copy_gate(&m, &mv).unwrap();
        assert!((b.copy_term + p_c.ln()).abs() < 1e-12);
    }

    #[test]
    fn schedule_halves_after_patience() {
        let mut lr = 0.001;
        let mut s = LrSchedule::new(6, true);
        assert!(!s.observe(0.5, &mut lr));
        for i in 0..6 {
            let halved = s.observe(0.4, &mut lr);
            assert_eq!(halved, i == 5);
        }
        assert_eq!(lr, 0.0005);
        // Improvement resets the counter.
        s.observe(0.6, &mut lr);
        for _ in 0..5 {
            s.observe(0.1, &mut lr);
        }
        assert_eq!(lr, 0.0005);
    }

    #[test]
    fn schedule_lower_is_better() {
        let mut lr = 1.0;
        let mut s = LrSchedule::new(2, false);
        s.observe(3.0, &mut lr);
        s.observe(2.0, &mut lr);
        s.observe(2.5, &mut lr);
        s.observe(2.0, &mut lr);
        assert_eq!(lr, 0.5);
    }

    #[test]
    fn zero_length_run_changes_nothing() {
        let mut m = Model::new(tiny_hyper(), 3).unwrap();
        let before = m.store.clone();
        let data = vec![instance("a c d b", "x c d y")];
        let cfg = TrainConfig {
            max_steps: 0,
            max_copy_len: 3,
            ..TrainConfig::default()
        };
        let mut evals = 0;
        let summary = train(&cfg, &data, &data, &mut m, |_, _| {
            evals += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(summary.steps, 0);
        assert_eq!(evals, 0);
        for ((_, _, a), (_, _, b)) in before.iter().zip(m.store.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn train_rejects_empty_and_bad_config() {
        let mut m = Model::new(tiny_hyper(), 3).unwrap();
        let data = vec![instance("a c d b", "x c d y")];
        let cfg = TrainConfig {
            max_copy_len: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&cfg, &[], &data, &mut m, |_, _| Ok(())),
            Err(Error::EmptyInput(_))
        ));
        let bad = TrainConfig {
            batch_size: 0,
            ..cfg.clone()
        };
        assert!(train(&bad, &data, &data, &mut m, |_, _| Ok(())).is_err());
    }

    #[test]
    fn eval_record_log_line() {
        let r = EvalRecord {
            step: 2000,
            lr: 0.0005,
            train_loss: 1.5,
            dev_metric: 0.25,
        };
        assert_eq!(r.to_string(), "2000\t0.0005\t1.500000\t0.250000");
    }
}
