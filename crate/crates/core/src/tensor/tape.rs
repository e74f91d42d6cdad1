//! Define-by-run tape for reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Each
//! recorded operation caches the value ids it needs for its backward
//! rule; [`Tape::backward`] replays the record once in reverse,
//! accumulating vector-Jacobian products into per-value gradient slots.
//!
//! Tapes are rebuilt per sequence. Sequences in this artifact are short
//! (< ~260 steps), so retaining all activations is acceptable.

use super::kernels;
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

enum Op {
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Affine { x: ValueId, mul: f64 },
    ScaleBy { x: ValueId, s: ValueId },
    MatVec { a: ValueId, x: ValueId },
    MatTVec { a: ValueId, x: ValueId },
    Dot(ValueId, ValueId),
    Sum(ValueId),
    Mean(ValueId),
    Concat(ValueId, ValueId),
    Sigmoid(ValueId),
    Tanh(ValueId),
    Relu(ValueId),
    HardSigmoid(ValueId),
    Softplus(ValueId),
    Softmax(ValueId),
    CosineSim(ValueId, ValueId),
    CosineRows { m: ValueId, k: ValueId },
    CircularConv { w: ValueId, s: ValueId },
    Sharpen { w: ValueId, gamma: ValueId, w_max: f64, denom: f64 },
    Interpolate { a: ValueId, b: ValueId, gate: ValueId },
    EraseAdd { m: ValueId, w: ValueId, e: ValueId, a: ValueId },
    BceFromLogit { z: ValueId, label: f64 },
    BroadcastRows { x: ValueId },
}

struct Node {
    out: ValueId,
    op: Op,
}

/// Recorded forward pass. Values are indexed by insertion order, so
/// leaves registered first keep stable, predictable ids.
#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.index()]
    }

    /// Id of the value at `index` (insertion order). Leaves registered
    /// first occupy the first indices.
    pub fn value_id(&self, index: usize) -> ValueId {
        assert!(index < self.values.len(), "value index out of range");
        ValueId(index as u32)
    }

    /// Registers an input value (parameter or constant).
    pub fn leaf(&mut self, t: Tensor) -> ValueId {
        self.push_value(t)
    }

    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.push_value(Tensor::scalar(v))
    }

    fn push_value(&mut self, t: Tensor) -> ValueId {
        let id = ValueId(u32::try_from(self.values.len()).expect("tape overflow"));
        self.values.push(t);
        id
    }

    fn push_node(&mut self, t: Tensor, op: Op) -> ValueId {
        let out = self.push_value(t);
        self.nodes.push(Node { out, op });
        out
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add: shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push_node(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "sub: shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push_node(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mul: shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push_node(t, Op::Mul(a, b))
    }

    /// Elementwise mul*x + add.
    pub fn affine(&mut self, x: ValueId, mul: f64, add: f64) -> ValueId {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| mul * v + add).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).unwrap();
        self.push_node(t, Op::Affine { x, mul })
    }

    /// Scales tensor `x` by the scalar value `s`.
    pub fn scale_by(&mut self, x: ValueId, s: ValueId) -> ValueId {
        let sv = self.value(s).item();
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| sv * v).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).unwrap();
        self.push_node(t, Op::ScaleBy { x, s })
    }

    pub fn matvec(&mut self, a: ValueId, x: ValueId) -> ValueId {
        let (ta, tx) = (self.value(a), self.value(x));
        assert!(
            ta.shape().len() == 2 && tx.shape().len() == 1 && ta.cols() == tx.len(),
            "matvec: shape mismatch {:?} · {:?}",
            ta.shape(),
            tx.shape()
        );
        let mut out = vec![0.0; ta.rows()];
        kernels::matvec(ta.rows(), ta.cols(), ta.data(), tx.data(), &mut out);
        self.push_node(Tensor::vector(out), Op::MatVec { a, x })
    }

    /// out = Aᵀx; with A an [n×w] matrix and x an [n] weighting this is
    /// the weighted sum of the rows of A.
    pub fn mat_t_vec(&mut self, a: ValueId, x: ValueId) -> ValueId {
        let (ta, tx) = (self.value(a), self.value(x));
        assert!(
            ta.shape().len() == 2 && tx.shape().len() == 1 && ta.rows() == tx.len(),
            "mat_t_vec: shape mismatch {:?}ᵀ · {:?}",
            ta.shape(),
            tx.shape()
        );
        let mut out = vec![0.0; ta.cols()];
        kernels::mat_t_vec(ta.rows(), ta.cols(), ta.data(), tx.data(), &mut out);
        self.push_node(Tensor::vector(out), Op::MatTVec { a, x })
    }

    pub fn dot(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "dot: length mismatch");
        let v = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        self.push_node(Tensor::scalar(v), Op::Dot(a, b))
    }

    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let v = self.value(x).sum();
        self.push_node(Tensor::scalar(v), Op::Sum(x))
    }

    pub fn mean(&mut self, x: ValueId) -> ValueId {
        let tx = self.value(x);
        assert!(!tx.is_empty(), "mean: empty input");
        let v = tx.sum() / tx.len() as f64;
        self.push_node(Tensor::scalar(v), Op::Mean(x))
    }

    pub fn concat(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.shape().len() == 1 && tb.shape().len() == 1,
            "concat: vectors only"
        );
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        self.push_node(Tensor::vector(data), Op::Concat(a, b))
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let t = self.map_values(x, kernels::sigmoid);
        self.push_node(t, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        let t = self.map_values(x, f64::tanh);
        self.push_node(t, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let t = self.map_values(x, kernels::relu);
        self.push_node(t, Op::Relu(x))
    }

    pub fn hard_sigmoid(&mut self, x: ValueId) -> ValueId {
        let t = self.map_values(x, kernels::hard_sigmoid);
        self.push_node(t, Op::HardSigmoid(x))
    }

    pub fn softplus(&mut self, x: ValueId) -> ValueId {
        let t = self.map_values(x, kernels::softplus);
        self.push_node(t, Op::Softplus(x))
    }

    pub fn softmax(&mut self, x: ValueId) -> ValueId {
        let tx = self.value(x);
        assert!(!tx.is_empty(), "softmax: empty input");
        let mut out = vec![0.0; tx.len()];
        kernels::softmax(tx.data(), &mut out);
        self.push_node(Tensor::vector(out), Op::Softmax(x))
    }

    pub fn cosine_similarity(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "cosine_similarity: length mismatch");
        let v = kernels::cosine_similarity(ta.data(), tb.data());
        self.push_node(Tensor::scalar(v), Op::CosineSim(a, b))
    }

    /// Cosine similarity of key `k` against every row of matrix `m`.
    pub fn cosine_rows(&mut self, m: ValueId, k: ValueId) -> ValueId {
        let (tm, tk) = (self.value(m), self.value(k));
        assert!(
            tm.shape().len() == 2 && tm.cols() == tk.len(),
            "cosine_rows: shape mismatch {:?} vs {:?}",
            tm.shape(),
            tk.shape()
        );
        let mut out = vec![0.0; tm.rows()];
        kernels::cosine_rows(tm.rows(), tm.cols(), tm.data(), tk.data(), &mut out);
        self.push_node(Tensor::vector(out), Op::CosineRows { m, k })
    }

    pub fn circular_conv(&mut self, w: ValueId, s: ValueId) -> ValueId {
        let (tw, ts) = (self.value(w), self.value(s));
        assert!(ts.len() % 2 == 1, "circular_conv: even shift window");
        assert!(ts.len() <= tw.len(), "circular_conv: window exceeds weighting");
        let mut out = vec![0.0; tw.len()];
        kernels::circular_convolve(tw.data(), ts.data(), &mut out);
        self.push_node(Tensor::vector(out), Op::CircularConv { w, s })
    }

    /// w^γ / Σ w^γ with γ a scalar value on the tape.
    pub fn sharpen(&mut self, w: ValueId, gamma: ValueId) -> ValueId {
        let gv = self.value(gamma).item();
        let tw = self.value(w);
        let mut out = vec![0.0; tw.len()];
        let cache = kernels::sharpen(tw.data(), gv, &mut out);
        self.push_node(
            Tensor::vector(out),
            Op::Sharpen {
                w,
                gamma,
                w_max: cache.w_max,
                denom: cache.denom,
            },
        )
    }

    /// gate·a + (1 − gate)·b with the gate a scalar value on the tape.
    pub fn interpolate(&mut self, a: ValueId, b: ValueId, gate: ValueId) -> ValueId {
        let g = self.value(gate).item();
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "interpolate: length mismatch");
        let mut out = vec![0.0; ta.len()];
        kernels::interpolate(ta.data(), tb.data(), g, &mut out);
        self.push_node(Tensor::vector(out), Op::Interpolate { a, b, gate })
    }

    /// Erase-then-add write to a memory matrix.
    pub fn erase_add(&mut self, m: ValueId, w: ValueId, e: ValueId, a: ValueId) -> ValueId {
        let (tm, tw, te, ta) = (self.value(m), self.value(w), self.value(e), self.value(a));
        assert!(
            tm.shape().len() == 2
                && tw.len() == tm.rows()
                && te.len() == tm.cols()
                && ta.len() == tm.cols(),
            "erase_add: shape mismatch"
        );
        let (rows, width) = (tm.rows(), tm.cols());
        let mut out = vec![0.0; rows * width];
        kernels::erase_add(rows, width, tm.data(), tw.data(), te.data(), ta.data(), &mut out);
        self.push_node(Tensor::matrix(rows, width, out), Op::EraseAdd { m, w, e, a })
    }

    /// Binary cross-entropy of sigmoid(z) against a constant 0/1 label,
    /// computed from the logit for numerical stability.
    pub fn bce_from_logit(&mut self, z: ValueId, label: f64) -> ValueId {
        let zv = self.value(z).item();
        let v = kernels::bce_from_logit(zv, label);
        self.push_node(Tensor::scalar(v), Op::BceFromLogit { z, label })
    }

    /// Tiles a vector into a matrix with `rows` identical rows.
    pub fn broadcast_rows(&mut self, x: ValueId, rows: usize) -> ValueId {
        let tx = self.value(x);
        assert_eq!(tx.shape().len(), 1, "broadcast_rows: vector input");
        let width = tx.len();
        let mut data = Vec::with_capacity(rows * width);
        for _ in 0..rows {
            data.extend_from_slice(tx.data());
        }
        self.push_node(Tensor::matrix(rows, width, data), Op::BroadcastRows { x })
    }

    fn map_values(&self, x: ValueId, f: impl Fn(f64) -> f64) -> Tensor {
        let tx = self.value(x);
        Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().map(|&v| f(v)).collect(),
        )
        .unwrap()
    }

    /// Smallest distance from any recorded relu or hard-sigmoid input
    /// to its nearest kink (0 for relu, ±2.5 for hard sigmoid), or
    /// infinity if none were recorded. Gradient checks use this to
    /// confirm the evaluation point is differentiable.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => {
                    for &v in self.value(x).data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::HardSigmoid(x) => {
                    for &v in self.value(x).data() {
                        margin = margin.min((v - 2.5).abs().min((v + 2.5).abs()));
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse pass from a scalar loss. Visits every recorded operation
    /// exactly once, in reverse recording order, accumulating gradients
    /// over shared subexpressions.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                len: lt.len(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        grads[loss.index()] = Some(vec![1.0]);

        for node in self.nodes.iter().rev() {
            // A value is produced by exactly one node, and all of its
            // consumers sit later on the tape, so its gradient is final
            // here and can be moved out.
            let Some(g) = grads[node.out.index()].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
        }

        Ok(Gradients { grads })
    }

    fn slot<'a>(
        &self,
        grads: &'a mut Vec<Option<Vec<f64>>>,
        id: ValueId,
    ) -> &'a mut Vec<f64> {
        let len = self.values[id.index()].len();
        grads[id.index()].get_or_insert_with(|| vec![0.0; len])
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        match node.op {
            Op::Add(a, b) => {
                axpy(self.slot(grads, a), g, 1.0);
                axpy(self.slot(grads, b), g, 1.0);
            }
            Op::Sub(a, b) => {
                axpy(self.slot(grads, a), g, 1.0);
                axpy(self.slot(grads, b), g, -1.0);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                {
                    let da = self.slot(grads, a);
                    for i in 0..g.len() {
                        da[i] += g[i] * tb.data()[i];
                    }
                }
                let db = self.slot(grads, b);
                for i in 0..g.len() {
                    db[i] += g[i] * ta.data()[i];
                }
            }
            Op::Affine { x, mul } => {
                axpy(self.slot(grads, x), g, mul);
            }
            Op::ScaleBy { x, s } => {
                let sv = self.value(s).item();
                let tx = self.value(x);
                axpy(self.slot(grads, x), g, sv);
                let mut acc = 0.0;
                for i in 0..g.len() {
                    acc += g[i] * tx.data()[i];
                }
                self.slot(grads, s)[0] += acc;
            }
            Op::MatVec { a, x } => {
                let (ta, tx) = (self.value(a), self.value(x));
                let (rows, cols) = (ta.rows(), ta.cols());
                {
                    let da = self.slot(grads, a);
                    for i in 0..rows {
                        let gi = g[i];
                        let dst = &mut da[i * cols..(i + 1) * cols];
                        for j in 0..cols {
                            dst[j] += gi * tx.data()[j];
                        }
                    }
                }
                let dx = self.slot(grads, x);
                for i in 0..rows {
                    let gi = g[i];
                    let row = &ta.data()[i * cols..(i + 1) * cols];
                    for j in 0..cols {
                        dx[j] += gi * row[j];
                    }
                }
            }
            Op::MatTVec { a, x } => {
                let (ta, tx) = (self.value(a), self.value(x));
                let (rows, cols) = (ta.rows(), ta.cols());
                {
                    let da = self.slot(grads, a);
                    for i in 0..rows {
                        let xi = tx.data()[i];
                        let dst = &mut da[i * cols..(i + 1) * cols];
                        for j in 0..cols {
                            dst[j] += xi * g[j];
                        }
                    }
                }
                let dx = self.slot(grads, x);
                for i in 0..rows {
                    let row = &ta.data()[i * cols..(i + 1) * cols];
                    let mut acc = 0.0;
                    for j in 0..cols {
                        acc += row[j] * g[j];
                    }
                    dx[i] += acc;
                }
            }
            Op::Dot(a, b) => {
                let gv = g[0];
                let (ta, tb) = (self.value(a), self.value(b));
                {
                    let da = self.slot(grads, a);
                    for i in 0..da.len() {
                        da[i] += gv * tb.data()[i];
                    }
                }
                let db = self.slot(grads, b);
                for i in 0..db.len() {
                    db[i] += gv * ta.data()[i];
                }
            }
            Op::Sum(x) => {
                let gv = g[0];
                for d in self.slot(grads, x).iter_mut() {
                    *d += gv;
                }
            }
            Op::Mean(x) => {
                let n = self.value(x).len() as f64;
                let gv = g[0] / n;
                for d in self.slot(grads, x).iter_mut() {
                    *d += gv;
                }
            }
            Op::Concat(a, b) => {
                let na = self.value(a).len();
                axpy(self.slot(grads, a), &g[..na], 1.0);
                axpy(self.slot(grads, b), &g[na..], 1.0);
            }
            Op::Sigmoid(x) => {
                let y = self.value(node.out);
                let dx = self.slot(grads, x);
                for i in 0..g.len() {
                    let yv = y.data()[i];
                    dx[i] += g[i] * yv * (1.0 - yv);
                }
            }
            Op::Tanh(x) => {
                let y = self.value(node.out);
                let dx = self.slot(grads, x);
                for i in 0..g.len() {
                    let yv = y.data()[i];
                    dx[i] += g[i] * (1.0 - yv * yv);
                }
            }
            Op::Relu(x) => {
                let tx = self.value(x);
                let dx = self.slot(grads, x);
                for i in 0..g.len() {
                    dx[i] += g[i] * kernels::relu_grad(tx.data()[i]);
                }
            }
            Op::HardSigmoid(x) => {
                let tx = self.value(x);
                let dx = self.slot(grads, x);
                for i in 0..g.len() {
                    dx[i] += g[i] * kernels::hard_sigmoid_grad(tx.data()[i]);
                }
            }
            Op::Softplus(x) => {
                let tx = self.value(x);
                let dx = self.slot(grads, x);
                for i in 0..g.len() {
                    dx[i] += g[i] * kernels::sigmoid(tx.data()[i]);
                }
            }
            Op::Softmax(x) => {
                let y = self.value(node.out);
                let mut gy = 0.0;
                for i in 0..g.len() {
                    gy += g[i] * y.data()[i];
                }
                let dx = self.slot(grads, x);
                for i in 0..g.len() {
                    dx[i] += y.data()[i] * (g[i] - gy);
                }
            }
            Op::CosineSim(a, b) => {
                let gv = g[0];
                let (ta, tb) = (self.value(a), self.value(b));
                cosine_backward(ta.data(), tb.data(), gv, self.slot(grads, a));
                cosine_backward(tb.data(), ta.data(), gv, self.slot(grads, b));
            }
            Op::CosineRows { m, k } => {
                let (tm, tk) = (self.value(m), self.value(k));
                let (rows, width) = (tm.rows(), tm.cols());
                {
                    let dm = self.slot(grads, m);
                    for i in 0..rows {
                        let row = &tm.data()[i * width..(i + 1) * width];
                        cosine_backward(row, tk.data(), g[i], &mut dm[i * width..(i + 1) * width]);
                    }
                }
                let dk = self.slot(grads, k);
                for i in 0..rows {
                    let row = &tm.data()[i * width..(i + 1) * width];
                    cosine_backward(tk.data(), row, g[i], dk);
                }
            }
            Op::CircularConv { w, s } => {
                let (tw, ts) = (self.value(w), self.value(s));
                let n = tw.len() as isize;
                let half = (ts.len() / 2) as isize;
                {
                    let dw = self.slot(grads, w);
                    for j in 0..n {
                        let mut acc = 0.0;
                        for (si, &sv) in ts.data().iter().enumerate() {
                            let offset = si as isize - half;
                            acc += sv * g[(j + offset).rem_euclid(n) as usize];
                        }
                        dw[j as usize] += acc;
                    }
                }
                let ds = self.slot(grads, s);
                for (si, d) in ds.iter_mut().enumerate() {
                    let offset = si as isize - half;
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += g[i as usize] * tw.data()[(i - offset).rem_euclid(n) as usize];
                    }
                    *d += acc;
                }
            }
            Op::Sharpen { w, gamma, w_max, denom } => {
                let gv = self.value(gamma).item();
                let tw = self.value(w);
                let y = self.value(node.out);
                let n = tw.len();
                if gv == 1.0 {
                    // Forward was an exact pass-through.
                    axpy(self.slot(grads, w), g, 1.0);
                } else {
                    let mut gy = 0.0;
                    for i in 0..n {
                        gy += g[i] * y.data()[i];
                    }
                    let dw = self.slot(grads, w);
                    for i in 0..n {
                        let base = tw.data()[i] / w_max;
                        let p = gv * base.powf(gv - 1.0) / (denom * w_max);
                        dw[i] += p * (g[i] - gy);
                    }
                }
                // dγ = Σ_i g_i y_i (ln w̃_i − Σ_j y_j ln w̃_j); terms with
                // w̃_i → 0 vanish since y_i → 0 faster than ln diverges.
                let mut mean_ln = 0.0;
                let yv = |i: usize| {
                    if gv == 1.0 {
                        tw.data()[i] / (w_max * denom)
                    } else {
                        y.data()[i]
                    }
                };
                for i in 0..n {
                    let base = tw.data()[i] / w_max;
                    if base > 0.0 {
                        mean_ln += yv(i) * base.ln();
                    }
                }
                let mut dg = 0.0;
                for i in 0..n {
                    let base = tw.data()[i] / w_max;
                    if base > 0.0 {
                        dg += g[i] * yv(i) * (base.ln() - mean_ln);
                    }
                }
                self.slot(grads, gamma)[0] += dg;
            }
            Op::Interpolate { a, b, gate } => {
                let gt = self.value(gate).item();
                let (ta, tb) = (self.value(a), self.value(b));
                axpy(self.slot(grads, a), g, gt);
                axpy(self.slot(grads, b), g, 1.0 - gt);
                let mut acc = 0.0;
                for i in 0..g.len() {
                    acc += g[i] * (ta.data()[i] - tb.data()[i]);
                }
                self.slot(grads, gate)[0] += acc;
            }
            Op::EraseAdd { m, w, e, a } => {
                let (tm, tw, te, ta) = (self.value(m), self.value(w), self.value(e), self.value(a));
                let (rows, width) = (tm.rows(), tm.cols());
                {
                    let dm = self.slot(grads, m);
                    for i in 0..rows {
                        let wi = tw.data()[i];
                        for j in 0..width {
                            dm[i * width + j] += g[i * width + j] * (1.0 - wi * te.data()[j]);
                        }
                    }
                }
                {
                    let dw = self.slot(grads, w);
                    for i in 0..rows {
                        let gr = &g[i * width..(i + 1) * width];
                        let mr = &tm.data()[i * width..(i + 1) * width];
                        let mut acc = 0.0;
                        for j in 0..width {
                            acc += gr[j] * (ta.data()[j] - mr[j] * te.data()[j]);
                        }
                        dw[i] += acc;
                    }
                }
                {
                    let de = self.slot(grads, e);
                    for i in 0..rows {
                        let wi = tw.data()[i];
                        let gr = &g[i * width..(i + 1) * width];
                        let mr = &tm.data()[i * width..(i + 1) * width];
                        for j in 0..width {
                            de[j] -= gr[j] * mr[j] * wi;
                        }
                    }
                }
                let da = self.slot(grads, a);
                for i in 0..rows {
                    let wi = tw.data()[i];
                    let gr = &g[i * width..(i + 1) * width];
                    for j in 0..width {
                        da[j] += gr[j] * wi;
                    }
                }
            }
            Op::BceFromLogit { z, label } => {
                let zv = self.value(z).item();
                self.slot(grads, z)[0] += g[0] * (kernels::sigmoid(zv) - label);
            }
            Op::BroadcastRows { x } => {
                let width = self.value(x).len();
                let rows = g.len() / width;
                let dx = self.slot(grads, x);
                for i in 0..rows {
                    for j in 0..width {
                        dx[j] += g[i * width + j];
                    }
                }
            }
        }
    }
}

/// dst += scale * src
fn axpy(dst: &mut [f64], src: &[f64], scale: f64) {
    for i in 0..dst.len() {
        dst[i] += scale * src[i];
    }
}

/// Gradient of cosine_similarity(a, b) with respect to `a`, scaled by
/// `g` and accumulated into `da`. Zero-norm inputs get the subgradient
/// with ∂‖a‖/∂a := 0.
fn cosine_backward(a: &[f64], b: &[f64], g: f64, da: &mut [f64]) {
    let mut dot = 0.0;
    let mut na2 = 0.0;
    let mut nb2 = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na2 += a[i] * a[i];
        nb2 += b[i] * b[i];
    }
    let na = na2.sqrt();
    let nb = nb2.sqrt();
    let denom = na * nb + kernels::COSINE_EPS;
    let na_safe = na.max(1e-12);
    let coef = dot * nb / (na_safe * denom * denom);
    for i in 0..a.len() {
        da[i] += g * (b[i] / denom - coef * a[i]);
    }
}

/// Gradients produced by [`Tape::backward`].
///
/// Intermediate values are consumed during the reverse pass; only
/// values that no operation produced (leaves) are guaranteed to retain
/// their gradient.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` if the loss does not depend on it.
    pub fn get(&self, id: ValueId) -> Option<&[f64]> {
        self.grads[id.index()].as_deref()
    }

    /// Gradient as a tensor shaped like `tape.value(id)`, zeros if absent.
    pub fn tensor(&self, tape: &Tape, id: ValueId) -> Tensor {
        match self.get(id) {
            Some(g) => Tensor::new(tape.value(id).shape().to_vec(), g.to_vec()).unwrap(),
            None => Tensor::zeros(tape.value(id).shape()),
        }
    }
}

/// Compares the analytic gradient of `f` at `x` against central finite
/// differences with step `h`; returns the max over coordinates of
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> f64
where
    F: FnMut(&mut Tape, ValueId) -> ValueId,
{
    let analytic = {
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let loss = f(&mut tape, xid);
        let grads = tape.backward(loss).expect("grad_check: loss must be scalar");
        grads.tensor(&tape, xid)
    };
    let mut eval = |t: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let xid = tape.leaf(t.clone());
        let loss = f(&mut tape, xid);
        tape.value(loss).item()
    };
    let mut max_rel = 0.0f64;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let numeric = (eval(&xp) - eval(&xm)) / (2.0 * h);
        let a = analytic.at(i);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

/// Multi-tensor variant of [`grad_check`]: `f` sees one leaf per input
/// tensor, registered in order. Returns the max relative error over all
/// coordinates of all inputs.
pub fn grad_check_params<F>(mut f: F, params: &[Tensor], h: f64) -> f64
where
    F: FnMut(&mut Tape, &[ValueId]) -> ValueId,
{
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&mut tape, &ids);
        let grads = tape.backward(loss).expect("grad_check: loss must be scalar");
        ids.iter().map(|&id| grads.tensor(&tape, id)).collect()
    };
    let mut eval = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&mut tape, &ids);
        tape.value(loss).item()
    };
    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for pi in 0..params.len() {
        for i in 0..params[pi].len() {
            let orig = params[pi].at(i);
            work[pi].data_mut()[i] = orig + h;
            let fp = eval(&work);
            work[pi].data_mut()[i] = orig - h;
            let fm = eval(&work);
            work[pi].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi].at(i);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}
