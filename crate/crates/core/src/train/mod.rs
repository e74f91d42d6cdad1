//! Loss, Adam optimizer, the batch training loop with early stopping,
//! and deterministic experiment configuration for both models.

pub mod checkpoint;

use crate::dyck::{self, LabeledSample};
use crate::model::SequenceModel;
use crate::rng::{self, streams};
use crate::tensor::{Tape, Tensor, ValueId};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sequence_loss: {0} probabilities vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("non-finite gradient at step {step}")]
    NanGradient { step: u64 },
    #[error("sampling failed: {0}")]
    Sampling(#[from] dyck::DyckError),
}

/// Which prefixes receive supervision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Supervision {
    /// Every prefix is labeled "is itself a Dyck word".
    #[serde(rename = "per-prefix")]
    PerPrefix,
    /// Only the final timestep is supervised.
    #[serde(rename = "final-only")]
    FinalOnly,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_steps: u64,
    /// Elementwise gradient clip bound.
    pub gradient_clip: f64,
    /// Exclusive length bound of training words (D_<max_len).
    pub max_len: usize,
    pub supervision: Supervision,
    pub seed: u64,
    /// Validation cadence in batches.
    pub eval_every: u64,
    /// Held-out words per class for validation AUC.
    pub eval_samples: usize,
    pub early_stop_auc: f64,
    /// Consecutive evaluations at or above `early_stop_auc` to stop.
    pub early_stop_patience: u32,
    /// Include wall-clock milliseconds in log records. Off by default
    /// so that log files are byte-reproducible across runs.
    pub log_wall_time: bool,
    /// Worker threads for per-sequence forward/backward; 0 = all cores.
    /// Gradients reduce in fixed order, so the result is identical for
    /// any thread count.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_steps: 50_000,
            gradient_clip: 10.0,
            max_len: 12,
            supervision: Supervision::PerPrefix,
            seed: 0,
            eval_every: 250,
            eval_samples: 256,
            early_stop_auc: 0.995,
            early_stop_patience: 3,
            log_wall_time: false,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return err("learning_rate must be positive");
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return err("batch_size must be even and ≥ 2 (half positives, half negatives)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return err("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return err("epsilon must be positive");
        }
        if !(self.gradient_clip > 0.0) {
            return err("gradient_clip must be positive");
        }
        if self.max_len < 3 {
            return err("max_len must be ≥ 3 to admit any word");
        }
        if self.eval_every == 0 {
            return err("eval_every must be positive");
        }
        if self.eval_samples == 0 {
            return err("eval_samples must be positive");
        }
        if self.early_stop_patience == 0 {
            return err("early_stop_patience must be positive");
        }
        if !(0.0..=1.0).contains(&self.early_stop_auc) {
            return err("early_stop_auc must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Mean binary cross-entropy of per-prefix probabilities against 0/1
/// labels; in final-only mode, the cross-entropy at the last step
/// alone. Probabilities are clamped to [1e-12, 1−1e-12].
pub fn sequence_loss(
    probs: &[f64],
    labels: &[u8],
    supervision: Supervision,
) -> Result<f64, TrainError> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(TrainError::LengthMismatch(probs.len(), labels.len()));
    }
    let bce = |p: f64, y: u8| {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        if y == 1 {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    };
    Ok(match supervision {
        Supervision::PerPrefix => {
            let total: f64 = probs.iter().zip(labels).map(|(&p, &y)| bce(p, y)).sum();
            total / probs.len() as f64
        }
        Supervision::FinalOnly => bce(probs[probs.len() - 1], labels[labels.len() - 1]),
    })
}

/// Tape counterpart of [`sequence_loss`], computed from logits so the
/// gradient stays exact even at saturated probabilities.
pub fn sequence_loss_tape(
    tape: &mut Tape,
    logits: &[ValueId],
    labels: &[u8],
    supervision: Supervision,
) -> ValueId {
    assert_eq!(logits.len(), labels.len());
    assert!(!logits.is_empty());
    match supervision {
        Supervision::PerPrefix => {
            let mut acc: Option<ValueId> = None;
            for (&z, &y) in logits.iter().zip(labels) {
                let term = tape.bce_from_logit(z, f64::from(y));
                acc = Some(match acc {
                    None => term,
                    Some(a) => tape.add(a, term),
                });
            }
            let total = acc.expect("nonempty");
            tape.affine(total, 1.0 / logits.len() as f64, 0.0)
        }
        Supervision::FinalOnly => tape.bce_from_logit(
            logits[logits.len() - 1],
            f64::from(labels[labels.len() - 1]),
        ),
    }
}

/// Per-parameter gradients, aligned with [`SequenceModel::visit`] order.
pub type GradSet = Vec<Tensor>;

/// Clamps every gradient component to [−clip, +clip].
pub fn clip_gradients(grads: &mut GradSet, clip: f64) {
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v = v.clamp(-clip, clip);
        }
    }
}

/// First/second moment accumulators, one per parameter tensor.
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(model: &impl SequenceModel) -> Self {
        let zeros: Vec<Tensor> = model
            .visit()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. Gradients must already be
/// clipped; a non-finite gradient aborts the batch.
pub fn adam_step<M: SequenceModel>(
    model: &mut M,
    grads: &GradSet,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NanGradient {
            step: state.step + 1,
        });
    }
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut params = model.visit_mut();
    assert_eq!(params.len(), grads.len(), "gradient/parameter mismatch");
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let pd = p.data_mut();
        for j in 0..g.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            pd[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Where training batches and the validation set come from.
pub enum DataSource {
    /// Fresh 50/50 batches sampled online each step.
    Online,
    /// Fixed datasets, cycled in order for reproducible file-based runs.
    Fixed {
        train: Vec<LabeledSample>,
        val: Vec<LabeledSample>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainOutcome {
    /// Validation AUC held at or above the early-stop bar.
    Converged,
    ReachedMaxSteps,
    /// Loss or gradients went non-finite; parameters are from the last
    /// completed batch.
    Diverged,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    /// Mean training loss over the window since the previous record.
    pub loss: f64,
    pub val_auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

#[derive(Debug)]
pub struct TrainReport {
    pub outcome: TrainOutcome,
    /// Step counter after training (absolute, includes `start_step`).
    pub steps: u64,
    pub log: Vec<LogRecord>,
    pub final_val_auc: Option<f64>,
}

/// Forward/backward for one sequence; gradients aligned to visit order.
fn sequence_grads<M: SequenceModel>(
    model: &M,
    n_params: usize,
    sample: &LabeledSample,
    supervision: Supervision,
) -> (f64, GradSet) {
    let inputs = dyck::encode(&sample.word);
    let mut tape = Tape::new();
    let logits = model.forward_logits_tape(&mut tape, &inputs);
    let loss = sequence_loss_tape(&mut tape, &logits, &sample.prefix_labels, supervision);
    let loss_value = tape.value(loss).item();
    let grads = tape.backward(loss).expect("loss is scalar");
    let out = (0..n_params)
        .map(|i| grads.tensor(&tape, tape.value_id(i)))
        .collect();
    (loss_value, out)
}

/// Mean loss and mean gradients over a batch. Sequences may run on
/// worker threads; the reduction is in fixed index order, so the result
/// does not depend on scheduling.
fn batch_grads<M: SequenceModel + Sync>(
    model: &M,
    batch: &[LabeledSample],
    supervision: Supervision,
    pool: Option<&rayon::ThreadPool>,
) -> (f64, GradSet) {
    let n_params = model.visit().len();
    let run = || -> Vec<(f64, GradSet)> {
        batch
            .par_iter()
            .map(|s| sequence_grads(model, n_params, s, supervision))
            .collect()
    };
    let per_seq = match pool {
        Some(p) => p.install(run),
        None => batch
            .iter()
            .map(|s| sequence_grads(model, n_params, s, supervision))
            .collect(),
    };
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut total: GradSet = model
        .visit()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape()))
        .collect();
    for (l, gs) in &per_seq {
        loss += l;
        for (acc, g) in total.iter_mut().zip(gs) {
            let a = acc.data_mut();
            let gd = g.data();
            for j in 0..a.len() {
                a[j] += gd[j];
            }
        }
    }
    for t in total.iter_mut() {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
    (loss * scale, total)
}

fn sample_batch(
    rng: &mut impl Rng,
    half: usize,
    max_len: usize,
) -> Result<Vec<LabeledSample>, TrainError> {
    let mut batch = Vec::with_capacity(2 * half);
    for _ in 0..half {
        batch.push(LabeledSample::new(dyck::sample_dyck_uniform(max_len, rng)?));
    }
    for _ in 0..half {
        batch.push(LabeledSample::new(dyck::sample_negative(max_len, rng)?));
    }
    Ok(batch)
}

/// Word-level validation AUC: final-step probability against the word
/// label.
fn validation_auc<M: SequenceModel>(model: &M, val: &[LabeledSample]) -> f64 {
    let scores: Vec<f64> = val
        .iter()
        .map(|s| {
            let probs = model.forward_probs(&dyck::encode(&s.word));
            *probs.last().expect("nonempty word")
        })
        .collect();
    let labels: Vec<u8> = val.iter().map(|s| s.word_label).collect();
    crate::eval::auc(&scores, &labels).expect("validation set has both classes")
}

/// The main loop: sample a 50/50 batch, average per-sequence losses and
/// gradients, clip, Adam-update; evaluate on the cadence and stop early
/// after `early_stop_patience` consecutive evaluations at or above
/// `early_stop_auc`. `start_step` offsets the step counter when
/// resuming from a checkpoint; training runs until `cfg.max_steps`.
pub fn train<M: SequenceModel + Sync>(
    model: &mut M,
    cfg: &TrainConfig,
    source: &DataSource,
    start_step: u64,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let pool = if cfg.threads == 1 {
        None
    } else {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .expect("thread pool"),
        )
    };
    let mut data_rng = rng::seeded(cfg.seed, streams::TRAIN_DATA);
    let val: Vec<LabeledSample> = match source {
        DataSource::Online => {
            let mut vrng = rng::seeded(cfg.seed, streams::VALIDATION);
            sample_batch(&mut vrng, cfg.eval_samples, cfg.max_len)?
        }
        DataSource::Fixed { val, .. } => val.clone(),
    };

    let mut adam = AdamState::new(model);
    let mut log = Vec::new();
    let mut streak = 0u32;
    let mut window_loss = 0.0;
    let mut window_count = 0u64;
    let mut final_val_auc = None;
    let started = Instant::now();

    let mut step = start_step;
    let mut outcome = TrainOutcome::ReachedMaxSteps;
    while step < cfg.max_steps {
        step += 1;
        let batch = match source {
            DataSource::Online => sample_batch(&mut data_rng, cfg.batch_size / 2, cfg.max_len)?,
            DataSource::Fixed { train, .. } => {
                let base = (step - 1) as usize * cfg.batch_size;
                (0..cfg.batch_size)
                    .map(|j| train[(base + j) % train.len()].clone())
                    .collect()
            }
        };
        let (loss, mut grads) = batch_grads(model, &batch, cfg.supervision, pool.as_ref());
        if !loss.is_finite() {
            outcome = TrainOutcome::Diverged;
            step -= 1;
            break;
        }
        clip_gradients(&mut grads, cfg.gradient_clip);
        if adam_step(model, &grads, &mut adam, cfg).is_err() {
            outcome = TrainOutcome::Diverged;
            step -= 1;
            break;
        }
        window_loss += loss;
        window_count += 1;

        if step % cfg.eval_every == 0 {
            let val_auc = validation_auc(model, &val);
            final_val_auc = Some(val_auc);
            log.push(LogRecord {
                step,
                loss: window_loss / window_count.max(1) as f64,
                val_auc,
                wall_ms: cfg
                    .log_wall_time
                    .then(|| started.elapsed().as_millis() as u64),
            });
            window_loss = 0.0;
            window_count = 0;
            if val_auc >= cfg.early_stop_auc {
                streak += 1;
                if streak >= cfg.early_stop_patience {
                    outcome = TrainOutcome::Converged;
                    break;
                }
            } else {
                streak = 0;
            }
        }
    }

    Ok(TrainReport {
        outcome,
        steps: step,
        log,
        final_val_auc,
    })
}
