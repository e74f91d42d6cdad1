//! The Neural Turing Machine cell: external memory, one read head, one
//! write head, the content/location addressing pipeline, and a
//! feed-forward controller emitting a per-timestep membership logit.
//!
//! Addressing follows the canonical pipeline: content weighting
//! softmax(β·cosine(k, M(i))), gate against the previous weighting,
//! circular shift over {−1, 0, +1}, then sharpen by γ. Within a
//! timestep the heads address the pre-write memory M_t, the read vector
//! r_t is taken from M_t, and the write then produces M_{t+1}; r_t is
//! consumed by the controller at step t+1.

use crate::model::{ModelKind, SequenceModel};
use crate::tensor::{kernels, ops, Tape, Tensor, ValueId};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Memory geometry and controller width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NtmGeometry {
    /// Memory locations N.
    pub locations: usize,
    /// Memory width W.
    pub width: usize,
    /// Controller hidden units H.
    pub hidden: usize,
    /// Shift window size (odd), centered offsets.
    pub shift_window: usize,
}

impl Default for NtmGeometry {
    fn default() -> Self {
        NtmGeometry {
            locations: 128,
            width: 20,
            hidden: 100,
            shift_window: 3,
        }
    }
}

impl NtmGeometry {
    pub fn input_dim(&self) -> usize {
        2 + self.width
    }
}

/// Dense layer y = Wx + b.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            w: Tensor::zeros(&[out_dim, in_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    /// Glorot-uniform weight init (±√(6/(fan_in+fan_out))), zero bias.
    pub fn glorot(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..out_dim * in_dim)
            .map(|_| bound * (2.0 * rng.gen::<f64>() - 1.0))
            .collect();
        Linear {
            w: Tensor::matrix(out_dim, in_dim, data),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = vec![0.0; self.w.rows()];
        kernels::matvec(self.w.rows(), self.w.cols(), self.w.data(), x.data(), &mut out);
        for (o, b) in out.iter_mut().zip(self.b.data()) {
            *o += b;
        }
        Tensor::vector(out)
    }
}

/// Per-head control projections from the controller hidden state.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub key: Linear,
    pub beta: Linear,
    pub gate: Linear,
    pub shift: Linear,
    pub gamma: Linear,
    /// Write head only.
    pub erase: Option<Linear>,
    /// Write head only.
    pub add: Option<Linear>,
}

impl HeadParams {
    fn init(g: &NtmGeometry, is_write: bool, rng: &mut impl Rng) -> Self {
        let h = g.hidden;
        HeadParams {
            key: Linear::glorot(g.width, h, rng),
            beta: Linear::glorot(1, h, rng),
            gate: Linear::glorot(1, h, rng),
            shift: Linear::glorot(g.shift_window, h, rng),
            gamma: Linear::glorot(1, h, rng),
            erase: is_write.then(|| Linear::glorot(g.width, h, rng)),
            add: is_write.then(|| Linear::glorot(g.width, h, rng)),
        }
    }

    fn zeros(g: &NtmGeometry, is_write: bool) -> Self {
        let h = g.hidden;
        HeadParams {
            key: Linear::zeros(g.width, h),
            beta: Linear::zeros(1, h),
            gate: Linear::zeros(1, h),
            shift: Linear::zeros(g.shift_window, h),
            gamma: Linear::zeros(1, h),
            erase: is_write.then(|| Linear::zeros(g.width, h)),
            add: is_write.then(|| Linear::zeros(g.width, h)),
        }
    }
}

/// All learnable parameters of the NTM, including the learned initial
/// state (read vector, head-weight logits, memory row bias).
#[derive(Clone, Debug)]
pub struct NtmParams {
    pub geometry: NtmGeometry,
    pub controller: Linear,
    pub read: HeadParams,
    pub write: HeadParams,
    pub output: Linear,
    pub init_read_vector: Tensor,
    pub init_read_logits: Tensor,
    pub init_write_logits: Tensor,
    pub init_memory_row: Tensor,
}

impl NtmParams {
    /// Fresh parameters: Glorot matrices, zero biases, memory bias at
    /// 1e-6, initial head logits biased +5 at location 0.
    pub fn init(geometry: NtmGeometry, rng: &mut impl Rng) -> Self {
        let mut head_logits = vec![0.0; geometry.locations];
        head_logits[0] = 5.0;
        NtmParams {
            controller: Linear::glorot(geometry.hidden, geometry.input_dim(), rng),
            read: HeadParams::init(&geometry, false, rng),
            write: HeadParams::init(&geometry, true, rng),
            output: Linear::glorot(1, geometry.hidden, rng),
            init_read_vector: Tensor::zeros(&[geometry.width]),
            init_read_logits: Tensor::vector(head_logits.clone()),
            init_write_logits: Tensor::vector(head_logits),
            init_memory_row: Tensor::full(&[geometry.width], 1e-6),
            geometry,
        }
    }

    /// All-zero parameters except the stated initial-state constants.
    pub fn zeros(geometry: NtmGeometry) -> Self {
        let mut head_logits = vec![0.0; geometry.locations];
        head_logits[0] = 5.0;
        NtmParams {
            controller: Linear::zeros(geometry.hidden, geometry.input_dim()),
            read: HeadParams::zeros(&geometry, false),
            write: HeadParams::zeros(&geometry, true),
            output: Linear::zeros(1, geometry.hidden),
            init_read_vector: Tensor::zeros(&[geometry.width]),
            init_read_logits: Tensor::vector(head_logits.clone()),
            init_write_logits: Tensor::vector(head_logits),
            init_memory_row: Tensor::full(&[geometry.width], 1e-6),
            geometry,
        }
    }
}

/// Controls emitted by the controller for one head at one timestep.
#[derive(Clone, Debug)]
pub struct HeadControls {
    pub key: Tensor,
    pub beta: f64,
    pub gate: f64,
    pub shift: Tensor,
    pub gamma: f64,
    pub erase: Option<Tensor>,
    pub add: Option<Tensor>,
}

/// Per-timestep mutable state.
#[derive(Clone, Debug)]
pub struct NtmState {
    /// Memory matrix [N × W].
    pub memory: Tensor,
    pub w_read: Tensor,
    pub w_write: Tensor,
    /// Read vector consumed by the controller at the next step.
    pub read: Tensor,
}

/// w^c(i) = softmax_i(β · cosine(k, M(i)))
pub fn content_address(memory: &Tensor, key: &Tensor, beta: f64) -> Tensor {
    let mut sims = vec![0.0; memory.rows()];
    kernels::cosine_rows(memory.rows(), memory.cols(), memory.data(), key.data(), &mut sims);
    for s in sims.iter_mut() {
        *s = beta * *s;
    }
    let mut out = vec![0.0; sims.len()];
    kernels::softmax(&sims, &mut out);
    Tensor::vector(out)
}

/// g·w_c + (1 − g)·w_prev
pub fn interpolate(w_c: &Tensor, w_prev: &Tensor, g: f64) -> Tensor {
    debug_assert!((0.0..=1.0).contains(&g));
    let mut out = vec![0.0; w_c.len()];
    kernels::interpolate(w_c.data(), w_prev.data(), g, &mut out);
    Tensor::vector(out)
}

/// Full addressing pipeline: content → interpolate → shift → sharpen.
pub fn address(memory: &Tensor, controls: &HeadControls, w_prev: &Tensor) -> Tensor {
    let w_c = content_address(memory, &controls.key, controls.beta);
    let w_g = interpolate(&w_c, w_prev, controls.gate);
    let w_s = ops::circular_convolve(&w_g, &controls.shift).expect("valid shift window");
    let w = ops::sharpen(&w_s, controls.gamma).expect("positive weighting");
    debug_assert!(w.is_distribution(1e-6), "head weighting left the simplex");
    w
}

/// r = Σ_i w(i)·M(i)
pub fn read(memory: &Tensor, w: &Tensor) -> Tensor {
    let mut out = vec![0.0; memory.cols()];
    kernels::mat_t_vec(memory.rows(), memory.cols(), memory.data(), w.data(), &mut out);
    Tensor::vector(out)
}

/// Erase-then-add update: M'(i) = M(i)∘(1 − w(i)·e) + w(i)·a
pub fn write(memory: &Tensor, w: &Tensor, e: &Tensor, a: &Tensor) -> Tensor {
    let (rows, width) = (memory.rows(), memory.cols());
    let mut out = vec![0.0; rows * width];
    kernels::erase_add(rows, width, memory.data(), w.data(), e.data(), a.data(), &mut out);
    Tensor::matrix(rows, width, out)
}

/// Controller outputs for one timestep.
#[derive(Clone, Debug)]
pub struct ControllerOut {
    pub hidden: Tensor,
    pub read: HeadControls,
    pub write: HeadControls,
    pub logit: f64,
}

fn head_controls(params: &HeadParams, hidden: &Tensor) -> HeadControls {
    let key = ops::relu(&params.key.apply(hidden));
    let beta = kernels::softplus(params.beta.apply(hidden).item());
    let gate = kernels::sigmoid(params.gate.apply(hidden).item());
    let shift = ops::softmax(&params.shift.apply(hidden)).expect("nonempty shift");
    let gamma = 1.0 + kernels::softplus(params.gamma.apply(hidden).item());
    let erase = params.erase.as_ref().map(|l| ops::hard_sigmoid(&l.apply(hidden)));
    let add = params.add.as_ref().map(|l| ops::relu(&l.apply(hidden)));
    HeadControls {
        key,
        beta,
        gate,
        shift,
        gamma,
        erase,
        add,
    }
}

/// hidden = relu(W·[x; r_prev] + b), controls via the per-field
/// squashings (relu keys/adds, hard sigmoid erases, softplus β,
/// 1+softplus γ, sigmoid g, softmax shifts), plus the raw output logit.
pub fn controller_forward(params: &NtmParams, x: &Tensor, r_prev: &Tensor) -> ControllerOut {
    assert_eq!(x.len(), 2, "controller input must be the 2-dim encoding");
    assert_eq!(r_prev.len(), params.geometry.width, "read vector width");
    let mut cat = Vec::with_capacity(x.len() + r_prev.len());
    cat.extend_from_slice(x.data());
    cat.extend_from_slice(r_prev.data());
    let hidden = ops::relu(&params.controller.apply(&Tensor::vector(cat)));
    let read = head_controls(&params.read, &hidden);
    let write = head_controls(&params.write, &hidden);
    let logit = params.output.apply(&hidden).item();
    ControllerOut {
        hidden,
        read,
        write,
        logit,
    }
}

/// Memory rows at the learned bias, head weightings from the learned
/// logits, read vector at the learned r_0.
pub fn init_state(params: &NtmParams) -> NtmState {
    let g = &params.geometry;
    let mut mem = Vec::with_capacity(g.locations * g.width);
    for _ in 0..g.locations {
        mem.extend_from_slice(params.init_memory_row.data());
    }
    NtmState {
        memory: Tensor::matrix(g.locations, g.width, mem),
        w_read: ops::softmax(&params.init_read_logits).expect("nonempty"),
        w_write: ops::softmax(&params.init_write_logits).expect("nonempty"),
        read: params.init_read_vector.clone(),
    }
}

/// Everything observable about one step, for tracing.
#[derive(Clone, Debug)]
pub struct StepDetail {
    pub p: f64,
    pub logit: f64,
    pub read_controls: HeadControls,
    pub write_controls: HeadControls,
}

/// One timestep: controller → address both heads on M_t → read from
/// M_t → write M_{t+1}.
pub fn ntm_step_detailed(params: &NtmParams, state: &NtmState, x: &Tensor) -> (NtmState, StepDetail) {
    let out = controller_forward(params, x, &state.read);
    let w_read = address(&state.memory, &out.read, &state.w_read);
    let w_write = address(&state.memory, &out.write, &state.w_write);
    let r = read(&state.memory, &w_read);
    let memory = write(
        &state.memory,
        &w_write,
        out.write.erase.as_ref().expect("write head has erase"),
        out.write.add.as_ref().expect("write head has add"),
    );
    let p = kernels::sigmoid(out.logit);
    let next = NtmState {
        memory,
        w_read,
        w_write,
        read: r,
    };
    let detail = StepDetail {
        p,
        logit: out.logit,
        read_controls: out.read,
        write_controls: out.write,
    };
    (next, detail)
}

pub fn ntm_step(params: &NtmParams, state: &NtmState, x: &Tensor) -> (NtmState, f64) {
    let (next, detail) = ntm_step_detailed(params, state, x);
    (next, detail.p)
}

/// Folds [`ntm_step`] from [`init_state`]; one probability per prefix.
pub fn forward_sequence(params: &NtmParams, inputs: &[Tensor]) -> Vec<f64> {
    assert!(!inputs.is_empty(), "forward_sequence: empty input");
    let mut state = init_state(params);
    let mut probs = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (next, p) = ntm_step(params, &state, x);
        state = next;
        probs.push(p);
    }
    probs
}

// ---------------------------------------------------------------------------
// Tape (training) path. Mirrors the plain path op for op; both share the
// kernels, so probabilities agree bit-exactly (pinned by a test).
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
pub struct LinearIds {
    pub w: ValueId,
    pub b: ValueId,
}

impl LinearIds {
    pub fn apply(&self, tape: &mut Tape, x: ValueId) -> ValueId {
        let mv = tape.matvec(self.w, x);
        tape.add(mv, self.b)
    }
}

#[derive(Clone, Copy)]
pub struct HeadIds {
    key: LinearIds,
    beta: LinearIds,
    gate: LinearIds,
    shift: LinearIds,
    gamma: LinearIds,
    erase: Option<LinearIds>,
    add: Option<LinearIds>,
}

/// Tape leaves for every parameter, registered in visit order.
pub struct NtmParamIds {
    pub controller: LinearIds,
    pub read: HeadIds,
    pub write: HeadIds,
    pub output: LinearIds,
    pub init_read_vector: ValueId,
    pub init_read_logits: ValueId,
    pub init_write_logits: ValueId,
    pub init_memory_row: ValueId,
}

impl NtmParamIds {
    /// Rebuilds the id struct from leaves laid out in visit order, as
    /// produced by [`register_leaves`] or an external gradient checker.
    pub fn from_ordered(ids: &[ValueId]) -> Self {
        assert_eq!(ids.len(), 32, "expected 32 parameter tensors");
        let lin = |i: usize| LinearIds { w: ids[i], b: ids[i + 1] };
        let head = |i: usize, write: bool| HeadIds {
            key: lin(i),
            beta: lin(i + 2),
            gate: lin(i + 4),
            shift: lin(i + 6),
            gamma: lin(i + 8),
            erase: write.then(|| lin(i + 10)),
            add: write.then(|| lin(i + 12)),
        };
        NtmParamIds {
            controller: lin(0),
            read: head(2, false),
            write: head(12, true),
            output: lin(26),
            init_read_vector: ids[28],
            init_read_logits: ids[29],
            init_write_logits: ids[30],
            init_memory_row: ids[31],
        }
    }
}

/// Registers one leaf per parameter tensor, in the same order as
/// [`SequenceModel::visit`].
pub fn register_leaves(tape: &mut Tape, params: &NtmParams) -> NtmParamIds {
    let mut leaf = |t: &Tensor| tape.leaf(t.clone());
    let linear = |leaf: &mut dyn FnMut(&Tensor) -> ValueId, l: &Linear| LinearIds {
        w: leaf(&l.w),
        b: leaf(&l.b),
    };
    let head = |leaf: &mut dyn FnMut(&Tensor) -> ValueId, h: &HeadParams| HeadIds {
        key: linear(leaf, &h.key),
        beta: linear(leaf, &h.beta),
        gate: linear(leaf, &h.gate),
        shift: linear(leaf, &h.shift),
        gamma: linear(leaf, &h.gamma),
        erase: h.erase.as_ref().map(|l| linear(leaf, l)),
        add: h.add.as_ref().map(|l| linear(leaf, l)),
    };
    NtmParamIds {
        controller: linear(&mut leaf, &params.controller),
        read: head(&mut leaf, &params.read),
        write: head(&mut leaf, &params.write),
        output: linear(&mut leaf, &params.output),
        init_read_vector: leaf(&params.init_read_vector),
        init_read_logits: leaf(&params.init_read_logits),
        init_write_logits: leaf(&params.init_write_logits),
        init_memory_row: leaf(&params.init_memory_row),
    }
}

struct HeadControlIds {
    key: ValueId,
    beta: ValueId,
    gate: ValueId,
    shift: ValueId,
    gamma: ValueId,
    erase: Option<ValueId>,
    add: Option<ValueId>,
}

fn head_controls_tape(tape: &mut Tape, ids: &HeadIds, hidden: ValueId) -> HeadControlIds {
    let key_pre = ids.key.apply(tape, hidden);
    let key = tape.relu(key_pre);
    let beta_pre = ids.beta.apply(tape, hidden);
    let beta = tape.softplus(beta_pre);
    let gate_pre = ids.gate.apply(tape, hidden);
    let gate = tape.sigmoid(gate_pre);
    let shift_pre = ids.shift.apply(tape, hidden);
    let shift = tape.softmax(shift_pre);
    let gamma_pre = ids.gamma.apply(tape, hidden);
    let gamma_sp = tape.softplus(gamma_pre);
    let gamma = tape.affine(gamma_sp, 1.0, 1.0);
    let erase = ids.erase.map(|l| {
        let pre = l.apply(tape, hidden);
        tape.hard_sigmoid(pre)
    });
    let add = ids.add.map(|l| {
        let pre = l.apply(tape, hidden);
        tape.relu(pre)
    });
    HeadControlIds {
        key,
        beta,
        gate,
        shift,
        gamma,
        erase,
        add,
    }
}

fn address_tape(tape: &mut Tape, memory: ValueId, c: &HeadControlIds, w_prev: ValueId) -> ValueId {
    let sims = tape.cosine_rows(memory, c.key);
    let scaled = tape.scale_by(sims, c.beta);
    let w_c = tape.softmax(scaled);
    let w_g = tape.interpolate(w_c, w_prev, c.gate);
    let w_s = tape.circular_conv(w_g, c.shift);
    let w = tape.sharpen(w_s, c.gamma);
    debug_assert!(
        tape.value(w).is_distribution(1e-6),
        "head weighting left the simplex"
    );
    w
}

/// Tape mirror of [`NtmState`].
pub struct TapeState {
    pub memory: ValueId,
    pub w_read: ValueId,
    pub w_write: ValueId,
    pub read: ValueId,
}

pub fn init_state_tape(tape: &mut Tape, ids: &NtmParamIds, geometry: &NtmGeometry) -> TapeState {
    let memory = tape.broadcast_rows(ids.init_memory_row, geometry.locations);
    TapeState {
        memory,
        w_read: tape.softmax(ids.init_read_logits),
        w_write: tape.softmax(ids.init_write_logits),
        read: ids.init_read_vector,
    }
}

/// One recorded timestep; returns the next state and the output logit.
pub fn ntm_step_tape(
    tape: &mut Tape,
    ids: &NtmParamIds,
    state: &TapeState,
    x: ValueId,
) -> (TapeState, ValueId) {
    let cat = tape.concat(x, state.read);
    let pre = ids.controller.apply(tape, cat);
    let hidden = tape.relu(pre);
    let read_c = head_controls_tape(tape, &ids.read, hidden);
    let write_c = head_controls_tape(tape, &ids.write, hidden);
    let w_read = address_tape(tape, state.memory, &read_c, state.w_read);
    let w_write = address_tape(tape, state.memory, &write_c, state.w_write);
    let r = tape.mat_t_vec(state.memory, w_read);
    let memory = tape.erase_add(
        state.memory,
        w_write,
        write_c.erase.expect("write head has erase"),
        write_c.add.expect("write head has add"),
    );
    let logit = ids.output.apply(tape, hidden);
    (
        TapeState {
            memory,
            w_read,
            w_write,
            read: r,
        },
        logit,
    )
}

/// Records the full unrolled sequence; one output logit per symbol.
pub fn forward_sequence_tape(
    tape: &mut Tape,
    ids: &NtmParamIds,
    geometry: &NtmGeometry,
    inputs: &[Tensor],
) -> Vec<ValueId> {
    assert!(!inputs.is_empty(), "forward_sequence_tape: empty input");
    let mut state = init_state_tape(tape, ids, geometry);
    let mut logits = Vec::with_capacity(inputs.len());
    for x in inputs {
        let xid = tape.leaf(x.clone());
        let (next, logit) = ntm_step_tape(tape, ids, &state, xid);
        state = next;
        logits.push(logit);
    }
    logits
}

impl SequenceModel for NtmParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Ntm
    }

    fn visit(&self) -> Vec<(&'static str, &Tensor)> {
        let erase = self.write.erase.as_ref().expect("write head has erase");
        let add = self.write.add.as_ref().expect("write head has add");
        let mut out: Vec<(&'static str, &Tensor)> = Vec::with_capacity(32);
        macro_rules! lin {
            ($w:literal, $b:literal, $l:expr) => {
                out.push(($w, &$l.w));
                out.push(($b, &$l.b));
            };
        }
        lin!("controller.w", "controller.b", self.controller);
        lin!("read.key.w", "read.key.b", self.read.key);
        lin!("read.beta.w", "read.beta.b", self.read.beta);
        lin!("read.gate.w", "read.gate.b", self.read.gate);
        lin!("read.shift.w", "read.shift.b", self.read.shift);
        lin!("read.gamma.w", "read.gamma.b", self.read.gamma);
        lin!("write.key.w", "write.key.b", self.write.key);
        lin!("write.beta.w", "write.beta.b", self.write.beta);
        lin!("write.gate.w", "write.gate.b", self.write.gate);
        lin!("write.shift.w", "write.shift.b", self.write.shift);
        lin!("write.gamma.w", "write.gamma.b", self.write.gamma);
        lin!("write.erase.w", "write.erase.b", erase);
        lin!("write.add.w", "write.add.b", add);
        lin!("output.w", "output.b", self.output);
        out.push(("init.read_vector", &self.init_read_vector));
        out.push(("init.read_logits", &self.init_read_logits));
        out.push(("init.write_logits", &self.init_write_logits));
        out.push(("init.memory_row", &self.init_memory_row));
        out
    }

    fn visit_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let erase = self.write.erase.as_mut().expect("write head has erase");
        let add = self.write.add.as_mut().expect("write head has add");
        let mut out: Vec<(&'static str, &mut Tensor)> = Vec::with_capacity(32);
        macro_rules! lin {
            ($w:literal, $b:literal, $l:expr) => {
                out.push(($w, &mut $l.w));
                out.push(($b, &mut $l.b));
            };
        }
        lin!("controller.w", "controller.b", self.controller);
        lin!("read.key.w", "read.key.b", self.read.key);
        lin!("read.beta.w", "read.beta.b", self.read.beta);
        lin!("read.gate.w", "read.gate.b", self.read.gate);
        lin!("read.shift.w", "read.shift.b", self.read.shift);
        lin!("read.gamma.w", "read.gamma.b", self.read.gamma);
        lin!("write.key.w", "write.key.b", self.write.key);
        lin!("write.beta.w", "write.beta.b", self.write.beta);
        lin!("write.gate.w", "write.gate.b", self.write.gate);
        lin!("write.shift.w", "write.shift.b", self.write.shift);
        lin!("write.gamma.w", "write.gamma.b", self.write.gamma);
        lin!("write.erase.w", "write.erase.b", erase);
        lin!("write.add.w", "write.add.b", add);
        lin!("output.w", "output.b", self.output);
        out.push(("init.read_vector", &mut self.init_read_vector));
        out.push(("init.read_logits", &mut self.init_read_logits));
        out.push(("init.write_logits", &mut self.init_write_logits));
        out.push(("init.memory_row", &mut self.init_memory_row));
        out
    }

    fn forward_logits_tape(&self, tape: &mut Tape, inputs: &[Tensor]) -> Vec<ValueId> {
        let ids = register_leaves(tape, self);
        forward_sequence_tape(tape, &ids, &self.geometry, inputs)
    }

    fn forward_probs(&self, inputs: &[Tensor]) -> Vec<f64> {
        forward_sequence(self, inputs)
    }

    fn memory_locations(&self) -> Option<usize> {
        Some(self.geometry.locations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyck;
    use crate::rng::seeded;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn small_geometry() -> NtmGeometry {
        NtmGeometry {
            locations: 8,
            width: 4,
            hidden: 6,
            shift_window: 3,
        }
    }

    #[test]
    fn content_address_zero_beta_is_uniform() {
        let m = Tensor::matrix(4, 2, vec![1., 0., 0., 1., 1., 1., 0.5, 0.25]);
        let k = Tensor::vector(vec![1., 0.]);
        let w = content_address(&m, &k, 0.0);
        for &v in w.data() {
            close(v, 0.25, 1e-15);
        }
    }

    #[test]
    fn content_address_concentrates_on_matching_row() {
        // orthogonal one-hot rows, key = row 2, strong beta
        let m = Tensor::matrix(
            4,
            4,
            vec![
                1., 0., 0., 0., //
                0., 1., 0., 0., //
                0., 0., 1., 0., //
                0., 0., 0., 1.,
            ],
        );
        let k = Tensor::vector(vec![0., 0., 1., 0.]);
        let w = content_address(&m, &k, 100.0);
        assert!(w.at(2) > 0.99, "mass at the matching row, got {:?}", w.data());
    }

    #[test]
    fn content_address_identical_rows_uniform() {
        let m = Tensor::matrix(3, 2, vec![0.3, 0.7, 0.3, 0.7, 0.3, 0.7]);
        let k = Tensor::vector(vec![1., 2.]);
        let w = content_address(&m, &k, 25.0);
        for &v in w.data() {
            close(v, 1.0 / 3.0, 1e-12);
        }
    }

    #[test]
    fn interpolate_gate_extremes_and_mixture() {
        let wc = Tensor::one_hot(4, 0);
        let wp = Tensor::one_hot(4, 1);
        assert_eq!(interpolate(&wc, &wp, 1.0).data(), wc.data());
        assert_eq!(interpolate(&wc, &wp, 0.0).data(), wp.data());
        assert_eq!(interpolate(&wc, &wp, 0.5).data(), &[0.5, 0.5, 0.0, 0.0]);
    }

    fn passthrough_controls(n_key: usize) -> HeadControls {
        HeadControls {
            key: Tensor::zeros(&[n_key]),
            beta: 1.0,
            gate: 0.0,
            shift: Tensor::vector(vec![0., 1., 0.]),
            gamma: 1.0,
            erase: None,
            add: None,
        }
    }

    #[test]
    fn address_pipeline_identity_on_prev() {
        let m = Tensor::matrix(4, 3, vec![0.4; 12]);
        let w_prev = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]);
        let controls = passthrough_controls(3);
        assert_eq!(address(&m, &controls, &w_prev).data(), w_prev.data());
    }

    #[test]
    fn address_pipeline_pure_shift() {
        let m = Tensor::matrix(4, 3, vec![0.4; 12]);
        let w_prev = Tensor::one_hot(4, 1);
        let mut controls = passthrough_controls(3);
        controls.shift = Tensor::vector(vec![0., 0., 1.]); // +1
        assert_eq!(address(&m, &controls, &w_prev).data(), Tensor::one_hot(4, 2).data());
        // wraps modulo N
        let w_last = Tensor::one_hot(4, 3);
        assert_eq!(address(&m, &controls, &w_last).data(), Tensor::one_hot(4, 0).data());
    }

    #[test]
    fn read_examples() {
        let m = Tensor::matrix(2, 2, vec![1., 0., 0., 2.]);
        assert_eq!(read(&m, &Tensor::one_hot(2, 1)).data(), &[0., 2.]);
        assert_eq!(read(&m, &Tensor::vector(vec![0.5, 0.5])).data(), &[0.5, 1.0]);
        let same = Tensor::matrix(2, 2, vec![3., 4., 3., 4.]);
        assert_eq!(read(&same, &Tensor::vector(vec![0.5, 0.5])).data(), &[3., 4.]);
    }

    #[test]
    fn write_zero_weight_is_identity() {
        let m = Tensor::matrix(2, 2, vec![1., 2., 3., 4.]);
        let w = Tensor::zeros(&[2]);
        let e = Tensor::vector(vec![1., 1.]);
        let a = Tensor::vector(vec![9., 9.]);
        assert_eq!(write(&m, &w, &e, &a).data(), m.data());
    }

    #[test]
    fn write_full_erase_then_add_replaces_row() {
        let m = Tensor::matrix(2, 2, vec![1., 2., 3., 4.]);
        let w = Tensor::one_hot(2, 0);
        let e = Tensor::vector(vec![1., 1.]);
        let a = Tensor::vector(vec![7., 8.]);
        let out = write(&m, &w, &e, &a);
        assert_eq!(out.data(), &[7., 8., 3., 4.]);
    }

    #[test]
    fn write_hand_example() {
        // M(i) = [2,2], w(i) = 0.5, e = [1,0], a = [1,1] → [1.5, 2.5]
        let m = Tensor::matrix(1, 2, vec![2., 2.]);
        let w = Tensor::vector(vec![0.5]);
        let e = Tensor::vector(vec![1., 0.]);
        let a = Tensor::vector(vec![1., 1.]);
        assert_eq!(write(&m, &w, &e, &a).data(), &[1.5, 2.5]);
    }

    #[test]
    fn controller_forward_zero_params() {
        let params = NtmParams::zeros(small_geometry());
        let x = Tensor::vector(vec![1., 0.]);
        let r = Tensor::zeros(&[4]);
        let out = controller_forward(&params, &x, &r);
        assert!(out.hidden.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.logit, 0.0);
        let ln2 = 2.0_f64.ln();
        for c in [&out.read, &out.write] {
            close(c.beta, ln2, 1e-15);
            close(c.gate, 0.5, 1e-15);
            close(c.gamma, 1.0 + ln2, 1e-15);
            assert!(c.key.data().iter().all(|&v| v == 0.0));
            for &s in c.shift.data() {
                close(s, 1.0 / 3.0, 1e-15);
            }
        }
        let e = out.write.erase.as_ref().unwrap();
        assert!(e.data().iter().all(|&v| v == 0.5));
        let a = out.write.add.as_ref().unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn controls_satisfy_range_invariants_on_random_params() {
        let mut rng = seeded(11, 1);
        let params = NtmParams::init(small_geometry(), &mut rng);
        let x = Tensor::vector(vec![0., 1.]);
        let r = Tensor::vector(vec![0.3, -0.2, 0.8, 0.1]);
        let out = controller_forward(&params, &x, &r);
        for c in [&out.read, &out.write] {
            assert!(c.beta >= 0.0);
            assert!((0.0..=1.0).contains(&c.gate));
            assert!(c.gamma >= 1.0);
            assert!(c.shift.is_distribution(1e-9));
            assert!(c.key.data().iter().all(|&v| v >= 0.0));
        }
        let e = out.write.erase.as_ref().unwrap();
        assert!(e.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let a = out.write.add.as_ref().unwrap();
        assert!(a.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn init_state_fresh_params() {
        let params = NtmParams::zeros(small_geometry());
        let state = init_state(&params);
        assert!(state.memory.data().iter().all(|&v| v == 1e-6));
        assert!(state.w_read.is_distribution(1e-12));
        assert!(state.w_write.is_distribution(1e-12));
        assert!(state.w_read.at(0) > state.w_read.at(1), "mass concentrated at 0");
        assert!(state.read.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_is_deterministic_and_keeps_invariants() {
        let mut rng = seeded(13, 1);
        let params = NtmParams::init(small_geometry(), &mut rng);
        let state = init_state(&params);
        let x = Tensor::vector(vec![1., 0.]);
        let (s1, p1) = ntm_step(&params, &state, &x);
        let (s2, p2) = ntm_step(&params, &state, &x);
        assert_eq!(p1.to_bits(), p2.to_bits());
        assert_eq!(s1.memory.data(), s2.memory.data());
        assert!(s1.w_read.is_distribution(1e-6));
        assert!(s1.w_write.is_distribution(1e-6));
    }

    #[test]
    fn zero_params_emit_half_probability() {
        let params = NtmParams::zeros(small_geometry());
        let inputs = dyck::encode(&"uudd".parse().unwrap());
        for p in forward_sequence(&params, &inputs) {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn forward_sequence_single_symbol() {
        let mut rng = seeded(14, 1);
        let params = NtmParams::init(small_geometry(), &mut rng);
        let probs = forward_sequence(&params, &dyck::encode(&"u".parse().unwrap()));
        assert_eq!(probs.len(), 1);
        assert!(probs[0] > 0.0 && probs[0] < 1.0);
    }

    #[test]
    fn tape_forward_matches_plain_forward_bitwise() {
        let mut rng = seeded(15, 1);
        let params = NtmParams::init(small_geometry(), &mut rng);
        let inputs = dyck::encode(&"uuduudddud".parse().unwrap());
        let plain = forward_sequence(&params, &inputs);
        let mut tape = Tape::new();
        let logits = {
            use crate::model::SequenceModel;
            params.forward_logits_tape(&mut tape, &inputs)
        };
        assert_eq!(plain.len(), logits.len());
        for (p, l) in plain.iter().zip(&logits) {
            let tape_p = kernels::sigmoid(tape.value(*l).item());
            assert_eq!(p.to_bits(), tape_p.to_bits());
        }
    }

    #[test]
    fn register_leaves_matches_visit_order() {
        use crate::model::SequenceModel;
        let mut rng = seeded(16, 1);
        let params = NtmParams::init(small_geometry(), &mut rng);
        let mut tape = Tape::new();
        let _ids = register_leaves(&mut tape, &params);
        let visited = params.visit();
        assert_eq!(tape.len(), visited.len());
        for (i, (name, t)) in visited.iter().enumerate() {
            assert_eq!(
                tape.value(tape.value_id(i)).data(),
                t.data(),
                "leaf {i} ({name}) out of order"
            );
        }
    }
}
