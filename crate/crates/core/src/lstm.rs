//! Single-layer LSTM classifier over the same encoded inputs and
//! supervision as the NTM, for the strong-generalization comparison.

use crate::dyck;
use crate::eval;
use crate::model::{ModelKind, SequenceModel};
use crate::ntm::{Linear, LinearIds};
use crate::rng::{self, streams};
use crate::tensor::{kernels, ops, Tape, Tensor, ValueId};
use crate::train::{self, DataSource, TrainConfig, TrainError, TrainOutcome};
use rand::Rng;

/// Gate matrices over [x; h_prev], plus the output projection.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub hidden: usize,
    pub input_gate: Linear,
    pub forget_gate: Linear,
    pub cell_gate: Linear,
    pub output_gate: Linear,
    pub output: Linear,
}

impl LstmParams {
    /// Glorot matrices, zero biases except the forget-gate bias at +1.
    pub fn init(hidden: usize, rng: &mut impl Rng) -> Self {
        let in_dim = 2 + hidden;
        let mut forget_gate = Linear::glorot(hidden, in_dim, rng);
        forget_gate.b.data_mut().fill(1.0);
        LstmParams {
            hidden,
            input_gate: Linear::glorot(hidden, in_dim, rng),
            forget_gate,
            cell_gate: Linear::glorot(hidden, in_dim, rng),
            output_gate: Linear::glorot(hidden, in_dim, rng),
            output: Linear::glorot(1, hidden, rng),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        let in_dim = 2 + hidden;
        LstmParams {
            hidden,
            input_gate: Linear::zeros(hidden, in_dim),
            forget_gate: Linear::zeros(hidden, in_dim),
            cell_gate: Linear::zeros(hidden, in_dim),
            output_gate: Linear::zeros(hidden, in_dim),
            output: Linear::zeros(1, hidden),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

pub fn init_state(params: &LstmParams) -> LstmState {
    LstmState {
        hidden: Tensor::zeros(&[params.hidden]),
        cell: Tensor::zeros(&[params.hidden]),
    }
}

fn vec_mul(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::vector(a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect())
}

fn vec_add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::vector(a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
}

/// Standard LSTM update; p = sigmoid of the output projection of h'.
pub fn lstm_step(params: &LstmParams, state: &LstmState, x: &Tensor) -> (LstmState, f64) {
    let mut cat = Vec::with_capacity(x.len() + state.hidden.len());
    cat.extend_from_slice(x.data());
    cat.extend_from_slice(state.hidden.data());
    let cat = Tensor::vector(cat);

    let i = ops::sigmoid(&params.input_gate.apply(&cat));
    let f = ops::sigmoid(&params.forget_gate.apply(&cat));
    let g = ops::tanh(&params.cell_gate.apply(&cat));
    let o = ops::sigmoid(&params.output_gate.apply(&cat));

    let cell = vec_add(&vec_mul(&f, &state.cell), &vec_mul(&i, &g));
    let hidden = vec_mul(&o, &ops::tanh(&cell));
    let logit = params.output.apply(&hidden).item();
    let p = kernels::sigmoid(logit);
    (LstmState { hidden, cell }, p)
}

pub fn forward_sequence(params: &LstmParams, inputs: &[Tensor]) -> Vec<f64> {
    assert!(!inputs.is_empty(), "forward_sequence: empty input");
    let mut state = init_state(params);
    let mut probs = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (next, p) = lstm_step(params, &state, x);
        state = next;
        probs.push(p);
    }
    probs
}

pub struct LstmParamIds {
    pub input_gate: LinearIds,
    pub forget_gate: LinearIds,
    pub cell_gate: LinearIds,
    pub output_gate: LinearIds,
    pub output: LinearIds,
}

impl LstmParamIds {
    /// Rebuilds the id struct from leaves laid out in visit order.
    pub fn from_ordered(ids: &[ValueId]) -> Self {
        assert_eq!(ids.len(), 10, "expected 10 parameter tensors");
        let lin = |i: usize| LinearIds { w: ids[i], b: ids[i + 1] };
        LstmParamIds {
            input_gate: lin(0),
            forget_gate: lin(2),
            cell_gate: lin(4),
            output_gate: lin(6),
            output: lin(8),
        }
    }
}

/// Registers one leaf per parameter, in visit order.
pub fn register_leaves(tape: &mut Tape, params: &LstmParams) -> LstmParamIds {
    let mut linear = |l: &Linear| LinearIds {
        w: tape.leaf(l.w.clone()),
        b: tape.leaf(l.b.clone()),
    };
    LstmParamIds {
        input_gate: linear(&params.input_gate),
        forget_gate: linear(&params.forget_gate),
        cell_gate: linear(&params.cell_gate),
        output_gate: linear(&params.output_gate),
        output: linear(&params.output),
    }
}

pub struct LstmTapeState {
    pub hidden: ValueId,
    pub cell: ValueId,
}

pub fn init_state_tape(tape: &mut Tape, hidden: usize) -> LstmTapeState {
    LstmTapeState {
        hidden: tape.leaf(Tensor::zeros(&[hidden])),
        cell: tape.leaf(Tensor::zeros(&[hidden])),
    }
}

pub fn lstm_step_tape(
    tape: &mut Tape,
    ids: &LstmParamIds,
    state: &LstmTapeState,
    x: ValueId,
) -> (LstmTapeState, ValueId) {
    let cat = tape.concat(x, state.hidden);
    let i_pre = ids.input_gate.apply(tape, cat);
    let i = tape.sigmoid(i_pre);
    let f_pre = ids.forget_gate.apply(tape, cat);
    let f = tape.sigmoid(f_pre);
    let g_pre = ids.cell_gate.apply(tape, cat);
    let g = tape.tanh(g_pre);
    let o_pre = ids.output_gate.apply(tape, cat);
    let o = tape.sigmoid(o_pre);

    let fc = tape.mul(f, state.cell);
    let ig = tape.mul(i, g);
    let cell = tape.add(fc, ig);
    let tc = tape.tanh(cell);
    let hidden = tape.mul(o, tc);
    let logit = ids.output.apply(tape, hidden);
    (LstmTapeState { hidden, cell }, logit)
}

pub fn forward_sequence_tape(
    tape: &mut Tape,
    ids: &LstmParamIds,
    hidden: usize,
    inputs: &[Tensor],
) -> Vec<ValueId> {
    assert!(!inputs.is_empty(), "forward_sequence_tape: empty input");
    let mut state = init_state_tape(tape, hidden);
    let mut logits = Vec::with_capacity(inputs.len());
    for x in inputs {
        let xid = tape.leaf(x.clone());
        let (next, logit) = lstm_step_tape(tape, ids, &state, xid);
        state = next;
        logits.push(logit);
    }
    logits
}

impl SequenceModel for LstmParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Lstm
    }

    fn visit(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("input_gate.w", &self.input_gate.w),
            ("input_gate.b", &self.input_gate.b),
            ("forget_gate.w", &self.forget_gate.w),
            ("forget_gate.b", &self.forget_gate.b),
            ("cell_gate.w", &self.cell_gate.w),
            ("cell_gate.b", &self.cell_gate.b),
            ("output_gate.w", &self.output_gate.w),
            ("output_gate.b", &self.output_gate.b),
            ("output.w", &self.output.w),
            ("output.b", &self.output.b),
        ]
    }

    fn visit_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("input_gate.w", &mut self.input_gate.w),
            ("input_gate.b", &mut self.input_gate.b),
            ("forget_gate.w", &mut self.forget_gate.w),
            ("forget_gate.b", &mut self.forget_gate.b),
            ("cell_gate.w", &mut self.cell_gate.w),
            ("cell_gate.b", &mut self.cell_gate.b),
            ("output_gate.w", &mut self.output_gate.w),
            ("output_gate.b", &mut self.output_gate.b),
            ("output.w", &mut self.output.w),
            ("output.b", &mut self.output.b),
        ]
    }

    fn forward_logits_tape(&self, tape: &mut Tape, inputs: &[Tensor]) -> Vec<ValueId> {
        let ids = register_leaves(tape, self);
        forward_sequence_tape(tape, &ids, self.hidden, inputs)
    }

    fn forward_probs(&self, inputs: &[Tensor]) -> Vec<f64> {
        forward_sequence(self, inputs)
    }

    fn lstm_hidden(&self) -> Option<usize> {
        Some(self.hidden)
    }
}

/// Hidden sizes searched when selecting the baseline.
pub const DEFAULT_SWEEP_SIZES: [usize; 8] = [2, 5, 10, 20, 50, 100, 200, 500];

/// Validation sample the sweep selects on.
#[derive(Clone, Copy, Debug)]
pub struct SweepEvalConfig {
    /// Exclusive length bound of the validation words.
    pub max_len_exclusive: usize,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for SweepEvalConfig {
    fn default() -> Self {
        SweepEvalConfig {
            max_len_exclusive: 200,
            samples_per_class: 500,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub hidden: usize,
    /// None when training diverged; excluded from the argmax.
    pub auc: Option<f64>,
    pub outcome: TrainOutcome,
}

#[derive(Debug)]
pub struct HiddenSweepOutcome {
    /// Size with the best validation AUC (ties go to the smallest).
    pub best: Option<usize>,
    /// Trained parameters of the selected size.
    pub best_model: Option<LstmParams>,
    pub entries: Vec<SweepEntry>,
}

/// Trains one LSTM per hidden size on D_<max_len, scores each on a
/// common long-word validation sample, and returns the argmax. Each
/// size trains with seed = train_cfg.seed + index, so the sweep is
/// deterministic given the config.
pub fn hidden_size_sweep(
    sizes: &[usize],
    train_cfg: &TrainConfig,
    eval_cfg: &SweepEvalConfig,
) -> Result<HiddenSweepOutcome, TrainError> {
    assert!(!sizes.is_empty(), "hidden_size_sweep: empty size list");
    let mut entries = Vec::with_capacity(sizes.len());
    let mut best: Option<(usize, f64)> = None;
    let mut best_model = None;

    // One shared validation sample keeps the comparison apples to apples.
    let mut vrng = rng::seeded(eval_cfg.seed, streams::SWEEP_BASE);
    let mut words: Vec<(dyck::Word, u8)> = Vec::with_capacity(2 * eval_cfg.samples_per_class);
    for _ in 0..eval_cfg.samples_per_class {
        words.push((
            dyck::sample_dyck_uniform(eval_cfg.max_len_exclusive, &mut vrng)?,
            1,
        ));
    }
    for _ in 0..eval_cfg.samples_per_class {
        words.push((dyck::sample_negative(eval_cfg.max_len_exclusive, &mut vrng)?, 0));
    }

    for (i, &hidden) in sizes.iter().enumerate() {
        let mut cfg = train_cfg.clone();
        cfg.seed = train_cfg.seed.wrapping_add(i as u64);
        let mut params = LstmParams::init(hidden, &mut rng::seeded(cfg.seed, streams::PARAM_INIT));
        let report = train::train(&mut params, &cfg, &DataSource::Online, 0)?;
        if report.outcome == TrainOutcome::Diverged {
            entries.push(SweepEntry {
                hidden,
                auc: None,
                outcome: report.outcome,
            });
            continue;
        }
        let scores: Vec<f64> = words.iter().map(|(w, _)| eval::final_prob(&params, w)).collect();
        let labels: Vec<u8> = words.iter().map(|(_, y)| *y).collect();
        let auc = eval::auc(&scores, &labels).expect("both classes present");
        entries.push(SweepEntry {
            hidden,
            auc: Some(auc),
            outcome: report.outcome,
        });
        let better = match best {
            None => true,
            Some((bh, ba)) => auc > ba || (auc == ba && hidden < bh),
        };
        if better {
            best = Some((hidden, auc));
            best_model = Some(params);
        }
    }

    Ok(HiddenSweepOutcome {
        best: best.map(|(h, _)| h),
        best_model,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyck;
    use crate::model::SequenceModel;
    use crate::rng::seeded;

    #[test]
    fn zero_params_zero_state_gives_half() {
        let params = LstmParams::zeros(5);
        let state = init_state(&params);
        let x = Tensor::vector(vec![1., 0.]);
        let (next, p) = lstm_step(&params, &state, &x);
        assert!(next.hidden.data().iter().all(|&v| v == 0.0));
        assert_eq!(p, 0.5);
        let probs = forward_sequence(&params, &dyck::encode(&"uudd".parse().unwrap()));
        assert!(probs.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn step_is_deterministic() {
        let mut rng = seeded(21, 1);
        let params = LstmParams::init(4, &mut rng);
        let state = init_state(&params);
        let x = Tensor::vector(vec![0., 1.]);
        let (s1, p1) = lstm_step(&params, &state, &x);
        let (s2, p2) = lstm_step(&params, &state, &x);
        assert_eq!(p1.to_bits(), p2.to_bits());
        assert_eq!(s1.hidden.data(), s2.hidden.data());
        assert_eq!(s1.cell.data(), s2.cell.data());
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = seeded(22, 1);
        let params = LstmParams::init(3, &mut rng);
        assert!(params.forget_gate.b.data().iter().all(|&v| v == 1.0));
        assert!(params.input_gate.b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tape_forward_matches_plain_forward_bitwise() {
        let mut rng = seeded(23, 1);
        let params = LstmParams::init(4, &mut rng);
        let inputs = dyck::encode(&"uduudd".parse().unwrap());
        let plain = forward_sequence(&params, &inputs);
        let mut tape = Tape::new();
        let logits = params.forward_logits_tape(&mut tape, &inputs);
        for (p, l) in plain.iter().zip(&logits) {
            let tape_p = kernels::sigmoid(tape.value(*l).item());
            assert_eq!(p.to_bits(), tape_p.to_bits());
        }
    }

    #[test]
    fn register_leaves_matches_visit_order() {
        let mut rng = seeded(24, 1);
        let params = LstmParams::init(4, &mut rng);
        let mut tape = Tape::new();
        let _ids = register_leaves(&mut tape, &params);
        for (i, (name, t)) in params.visit().iter().enumerate() {
            assert_eq!(tape.value(tape.value_id(i)).data(), t.data(), "leaf {name}");
        }
    }

    #[test]
    fn default_sweep_sizes() {
        assert_eq!(DEFAULT_SWEEP_SIZES, [2, 5, 10, 20, 50, 100, 200, 500]);
    }

    #[test]
    fn singleton_sweep_selects_its_only_size() {
        let train_cfg = TrainConfig {
            max_steps: 3,
            eval_every: 3,
            eval_samples: 8,
            batch_size: 4,
            seed: 5,
            threads: 1,
            ..TrainConfig::default()
        };
        let eval_cfg = SweepEvalConfig {
            max_len_exclusive: 20,
            samples_per_class: 20,
            seed: 6,
        };
        let out = hidden_size_sweep(&[10], &train_cfg, &eval_cfg).unwrap();
        assert_eq!(out.best, Some(10));
        assert_eq!(out.entries.len(), 1);
        let auc = out.entries[0].auc.unwrap();
        assert!((0.0..=1.0).contains(&auc));
        assert_eq!(out.best_model.unwrap().hidden, 10);
    }
}
