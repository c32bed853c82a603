//! Losses and the training loop.
//!
//! The header is supervised token by token against the gold header. Body row
//! slots are first matched to null-padded target rows (see [`crate::assignment`])
//! and then supervised against their assigned rows; a slot matched to a null
//! row learns the single token NULL, weighted by `null_scale`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assignment::{assign_targets, Assignment, PaddedTargets, TargetRow};
use crate::autodiff::gradcheck::{check_store_gradients, GradCheckReport};
use crate::autodiff::{Adam, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::model::{teacher_inputs, DecoderState, KvCache, LayerKv, Memory, Seq2SeqSet, Session};
use crate::table::Table;
use crate::tokenizer::{TokenId, Vocabulary, EOS, NEWROW, NULL};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the header loss; the body loss gets `1 - lambda`.
    pub lambda: f64,
    /// Loss factor on NULL targets.
    pub null_scale: f64,
    pub lr: f64,
    pub warmup_ratio: f64,
    /// Token budget per batch (source + header + body targets).
    pub max_tokens_per_batch: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Global gradient-norm clip, if any.
    pub clip_norm: Option<f64>,
    /// Validation interval in steps; 0 validates only at the end.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            null_scale: 0.2,
            lr: 1e-3,
            warmup_ratio: 0.05,
            max_tokens_per_batch: 1024,
            max_steps: 2000,
            seed: 0,
            clip_norm: Some(1.0),
            eval_every: 250,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.null_scale > 0.0 && self.null_scale <= 1.0) {
            return Err(Error::Config(format!("null_scale {} outside (0, 1]", self.null_scale)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!("warmup_ratio {} outside [0, 1]", self.warmup_ratio)));
        }
        if self.max_tokens_per_batch == 0 {
            return Err(Error::Config("max_tokens_per_batch must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip_norm {c} must be positive")));
            }
        }
        Ok(())
    }

    /// Learning rate at 0-based `step`: linear warmup, then constant.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = (self.warmup_ratio * self.max_steps as f64).ceil() as usize;
        if warm == 0 || step >= warm {
            self.lr
        } else {
            self.lr * (step + 1) as f64 / warm as f64
        }
    }
}

/// One training example in token form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchInstance {
    pub source: Vec<TokenId>,
    /// Header cells joined by SEP, terminated by NEWROW.
    pub header: Vec<TokenId>,
    /// Body rows as cells joined by SEP, without terminal.
    pub rows: Vec<Vec<TokenId>>,
}

impl BatchInstance {
    pub fn new(vocab: &Vocabulary, source: &str, table: &Table) -> Self {
        let mut header = vocab.encode_cells(&table.header);
        header.push(NEWROW);
        Self {
            source: vocab.encode(source),
            header,
            rows: table.body.iter().map(|r| vocab.encode_cells(r)).collect(),
        }
    }

    /// Body targets as the model sees them: each real row plus EOS.
    pub fn row_targets(&self) -> Vec<Vec<TokenId>> {
        self.rows
            .iter()
            .map(|r| r.iter().copied().chain(std::iter::once(EOS)).collect())
            .collect()
    }

    pub fn padded(&self, slots: usize) -> Result<PaddedTargets> {
        PaddedTargets::new(self.rows.clone(), slots)
    }

    pub fn token_count(&self) -> usize {
        self.source.len() + self.header.len() + self.rows.iter().map(|r| r.len() + 1).sum::<usize>()
    }
}

/// Header cross-entropy summed over the gold header tokens.
pub fn header_loss(model: &Seq2SeqSet, g: &mut Graph, mem: &Memory, header: &[TokenId]) -> Result<(Var, Vec<LayerKv>)> {
    let (logits, kv) = model.header_forward(g, mem, header)?;
    let targets: Vec<usize> = header.iter().map(|&t| t as usize).collect();
    let loss = g.cross_entropy(logits, &targets, &vec![1.0; targets.len()])?;
    Ok((loss, kv))
}

/// Body cross-entropy with slot `m` (0-based) supervised by `targets.rows[perm[m]]`.
pub fn body_loss(
    model: &Seq2SeqSet,
    g: &mut Graph,
    mem: &Memory,
    header_kv: &[LayerKv],
    targets: &PaddedTargets,
    perm: &[usize],
    null_scale: f64,
) -> Result<Var> {
    let slots = model.config.max_rows;
    if perm.len() != slots || targets.len() != slots {
        return Err(Error::Index(format!(
            "{} slots but {} assignments and {} targets",
            slots,
            perm.len(),
            targets.len()
        )));
    }
    let mut seqs: Vec<Vec<TokenId>> = Vec::with_capacity(slots);
    let mut weights = Vec::new();
    for &j in perm {
        match &targets.rows[j] {
            TargetRow::Real(t) => {
                let mut s = t.clone();
                s.push(EOS);
                weights.extend(std::iter::repeat_n(1.0, s.len()));
                seqs.push(s);
            }
            TargetRow::Null => {
                weights.push(null_scale);
                seqs.push(vec![NULL]);
            }
        }
    }
    let rows: Vec<(usize, &[TokenId])> = seqs.iter().enumerate().map(|(m, s)| (m + 1, s.as_slice())).collect();
    let logits = model.body_forward(g, mem, header_kv, &rows)?;
    let flat: Vec<usize> = seqs.iter().flatten().map(|&t| t as usize).collect();
    g.cross_entropy(logits, &flat, &weights)
}

/// `lambda * h + (1 - lambda) * b`.
pub fn total_loss(h: f64, b: f64, lambda: f64) -> f64 {
    lambda * h + (1.0 - lambda) * b
}

/// Loss values of one instance.
#[derive(Clone, Debug)]
pub struct InstanceLoss {
    pub header: f64,
    /// Absent when the body term carries no weight and was skipped.
    pub body: Option<f64>,
    pub total: f64,
    pub assignment: Option<Assignment>,
}

/// Graph handles produced by [`instance_forward`].
pub struct ForwardVars {
    pub total: Var,
    pub header: Var,
    pub body: Option<Var>,
}

/// Matches slots to targets with the model's current first-cell rollout, given
/// the encoder states and the teacher-forced header caches on `g`.
pub fn assign_for_instance(
    model: &Seq2SeqSet,
    g: &Graph,
    mem: &Memory,
    header_kv: &[LayerKv],
    header: &[TokenId],
    targets: &PaddedTargets,
) -> Result<Assignment> {
    let mut session = Session::from_encoder_states(model, g.value(mem.states).clone())?;
    let layers = header_kv
        .iter()
        .map(|kv| KvCache {
            keys: g.value(kv.keys).clone(),
            values: g.value(kv.values).clone(),
        })
        .collect();
    let state = DecoderState::with_header(model, teacher_inputs(header), layers)?;
    Ok(assign_targets(&mut session, &state, targets)?.0)
}

/// Builds the full loss of one instance on `g`. With `perm` absent the
/// assignment is computed from the current parameters.
pub fn instance_forward(
    model: &Seq2SeqSet,
    g: &mut Graph,
    inst: &BatchInstance,
    cfg: &TrainConfig,
    perm: Option<&[usize]>,
) -> Result<(ForwardVars, Option<Assignment>)> {
    let states = model.encode(g, &inst.source)?;
    let mem = model.memory(g, states)?;
    let (h, header_kv) = header_loss(model, g, &mem, &inst.header)?;
    if cfg.lambda >= 1.0 {
        return Ok((
            ForwardVars {
                total: h,
                header: h,
                body: None,
            },
            None,
        ));
    }
    let targets = inst.padded(model.config.max_rows)?;
    let (p, assignment) = match perm {
        Some(p) => (p.to_vec(), None),
        None => {
            let a = assign_for_instance(model, g, &mem, &header_kv, &inst.header, &targets)?;
            (a.perm.clone(), Some(a))
        }
    };
    let b = body_loss(model, g, &mem, &header_kv, &targets, &p, cfg.null_scale)?;
    let hs = g.scale(h, cfg.lambda)?;
    let bs = g.scale(b, 1.0 - cfg.lambda)?;
    let total = g.add(hs, bs)?;
    Ok((
        ForwardVars {
            total,
            header: h,
            body: Some(b),
        },
        assignment,
    ))
}

/// Loss values without recording gradients.
pub fn evaluate_instance(model: &Seq2SeqSet, inst: &BatchInstance, cfg: &TrainConfig, perm: Option<&[usize]>) -> Result<InstanceLoss> {
    let mut g = Graph::no_grad();
    let (vars, assignment) = instance_forward(model, &mut g, inst, cfg, perm)?;
    Ok(InstanceLoss {
        header: g.value(vars.header).item(),
        body: vars.body.map(|b| g.value(b).item()),
        total: g.value(vars.total).item(),
        assignment,
    })
}

/// Mean total loss over `data`.
pub fn mean_loss(model: &Seq2SeqSet, data: &[BatchInstance], cfg: &TrainConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let mut sum = 0.0;
    for inst in data {
        sum += evaluate_instance(model, inst, cfg, None)?.total;
    }
    Ok(sum / data.len() as f64)
}

/// Compares backpropagated gradients of one instance's total loss with
/// central differences over every model parameter. The assignment is
/// computed once from the current parameters and then held fixed, since the
/// matching itself is piecewise constant.
pub fn check_instance_gradients(
    model: &Seq2SeqSet,
    inst: &BatchInstance,
    cfg: &TrainConfig,
    eps: f64,
    floor: f64,
) -> Result<(GradCheckReport, Option<Assignment>)> {
    let mut g = Graph::new();
    let (vars, assignment) = instance_forward(model, &mut g, inst, cfg, None)?;
    g.backward(vars.total)?;
    let mut store = model.store.clone();
    store.zero_grads();
    g.accumulate_param_grads(&mut store)?;
    let perm = assignment.as_ref().map(|a| a.perm.clone());
    let ids: Vec<ParamId> = store.ids().collect();
    let mut probe = model.clone();
    let report = check_store_gradients(&mut store, &ids, eps, floor, |s| {
        probe.store.copy_values_from(s)?;
        Ok(evaluate_instance(&probe, inst, cfg, perm.as_deref())?.total)
    })?;
    Ok((report, assignment))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub header: f64,
    pub body: Option<f64>,
    pub total: f64,
    pub lr: f64,
    /// Fraction of slots whose assignment changed since the instance was last seen.
    pub churn: f64,
}

impl StepMetrics {
    pub fn tsv(&self) -> String {
        let body = self.body.map_or("-".to_string(), |b| format!("{b:.6}"));
        format!(
            "{}\t{:.6}\t{}\t{:.6}\t{:.3e}\t{:.4}",
            self.step, self.header, body, self.total, self.lr, self.churn
        )
    }
}

pub const LOG_HEADER: &str = "step\tL_h\tL_b\tL\tlr\tchurn";

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<StepMetrics>,
    /// (step, mean validation loss) at every validation.
    pub validations: Vec<(usize, f64)>,
    /// Step whose parameters the model holds on return, when validation ran.
    pub best_step: Option<usize>,
}

/// Groups instance indices into batches under the token budget; every batch
/// holds at least one instance.
pub fn make_batches(data: &[BatchInstance], order: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut tokens = 0;
    for &i in order {
        let n = data[i].token_count();
        if !cur.is_empty() && tokens + n > budget {
            batches.push(std::mem::take(&mut cur));
            tokens = 0;
        }
        cur.push(i);
        tokens += n;
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// Trains `model` in place for `cfg.max_steps` Adam steps. With validation
/// data, the parameters with the lowest validation loss are restored at the end.
/// Each step's metrics are also written to `log` as tab-separated lines.
pub fn train(
    model: &mut Seq2SeqSet,
    data: &[BatchInstance],
    valid: &[BatchInstance],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let slots = model.config.max_rows;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut last_perm: Vec<Option<Vec<usize>>> = vec![None; data.len()];
    let mut report = TrainReport {
        log: Vec::new(),
        validations: Vec::new(),
        best_step: None,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batches: Vec<Vec<usize>> = Vec::new();
    if let Some(w) = log.as_mut() {
        writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io("training log", e))?;
    }
    for step in 0..cfg.max_steps {
        if batches.is_empty() {
            order.shuffle(&mut rng);
            batches = make_batches(data, &order, cfg.max_tokens_per_batch);
            batches.reverse();
        }
        let batch = batches.pop().expect("refilled above");
        let (mut h_sum, mut b_sum, mut t_sum) = (0.0, 0.0, 0.0);
        let (mut changed, mut compared) = (0usize, 0usize);
        for &i in &batch {
            let mut g = Graph::new();
            let (vars, assignment) = instance_forward(model, &mut g, &data[i], cfg, None)?;
            let total = g.value(vars.total).item();
            if !total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss {total} on instance {i}"),
                });
            }
            g.backward(vars.total).map_err(|e| Error::Diverged {
                step,
                detail: e.to_string(),
            })?;
            g.accumulate_param_grads(&mut model.store)?;
            h_sum += g.value(vars.header).item();
            if let Some(b) = vars.body {
                b_sum += g.value(b).item();
            }
            t_sum += total;
            if let Some(a) = assignment {
                if let Some(prev) = &last_perm[i] {
                    changed += prev.iter().zip(&a.perm).filter(|(x, y)| x != y).count();
                    compared += slots;
                }
                last_perm[i] = Some(a.perm);
            }
        }
        let n = batch.len() as f64;
        model.store.scale_grads(1.0 / n);
        let norm = model.store.grad_norm();
        if !norm.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("gradient norm {norm}"),
            });
        }
        if let Some(c) = cfg.clip_norm {
            if norm > c {
                model.store.scale_grads(c / norm);
            }
        }
        let lr = cfg.lr_at(step);
        adam.lr = lr;
        adam.step(&mut model.store);
        let m = StepMetrics {
            step: step + 1,
            header: h_sum / n,
            body: (cfg.lambda < 1.0).then_some(b_sum / n),
            total: t_sum / n,
            lr,
            churn: if compared == 0 { 0.0 } else { changed as f64 / compared as f64 },
        };
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", m.tsv()).map_err(|e| Error::io("training log", e))?;
        }
        report.log.push(m);
        let done = step + 1 == cfg.max_steps;
        let due = cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0;
        if !valid.is_empty() && (due || done) {
            let v = mean_loss(model, valid, cfg)?;
            report.validations.push((step + 1, v));
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.store.clone()));
                report.best_step = Some(step + 1);
            }
        }
    }
    if let Some((_, store)) = best {
        model.store.copy_values_from(&store)?;
    }
    Ok(report)
}
