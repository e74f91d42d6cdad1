//! Double-double reference evaluator for gradient verification.
//!
//! Central finite differences in plain f64 bottom out at an absolute
//! noise floor of roughly ulp(loss)/2h — around 1e-11 for this model at
//! h = 1e-5 — which masks agreement on coordinates whose true gradient
//! is tiny. This module re-evaluates the unrolled forward pass in
//! ~31-digit double-double arithmetic, taking the difference
//! f(x+h) − f(x−h) before any rounding to f64, so the finite-difference
//! quotient is trustworthy down to ~1e-25. It shares no code with the
//! tape or the f64 kernels: a second, independent route to the same
//! function.

use crate::dyck::LabeledSample;
use crate::lstm::LstmParams;
use crate::ntm::{NtmGeometry, NtmParams};
use crate::tensor::Tensor;
use crate::train::Supervision;
use crate::SequenceModel;

/// Unevaluated sum hi + lo with |lo| ≤ ulp(hi)/2.
#[derive(Clone, Copy, Debug)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    const LN2: Dd = Dd {
        hi: 0.6931471805599453,
        lo: 2.3190468138462996e-17,
    };

    pub fn from_f64(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    /// Exact sum of two doubles as a Dd (used to perturb by exactly h).
    pub fn exact_sum(a: f64, b: f64) -> Dd {
        let (hi, lo) = two_sum(a, b);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::from_f64(q1)));
        let q2 = r.hi / o.hi;
        let r2 = r.sub(o.mul(Dd::from_f64(q2)));
        let q3 = r2.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }.add(Dd::from_f64(q3))
    }

    pub fn scale(self, c: f64) -> Dd {
        self.mul(Dd::from_f64(c))
    }

    pub fn sqrt(self) -> Dd {
        if self.hi == 0.0 {
            return Dd::ZERO;
        }
        let s = self.hi.sqrt();
        let sd = Dd::from_f64(s);
        // One Newton step: s + (x − s²)/(2s)
        let diff = self.sub(sd.mul(sd));
        sd.add(diff.div(sd.scale(2.0)))
    }

    /// exp via range reduction x = k·ln2 + r and a Taylor tail.
    pub fn exp(self) -> Dd {
        if self.hi < -709.0 {
            return Dd::ZERO;
        }
        if self.hi > 709.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        let k = (self.hi / Dd::LN2.hi).round();
        let r = self.sub(Dd::LN2.mul(Dd::from_f64(k)));
        // |r| ≤ ln2/2; 24 terms reach ~1e-33.
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for i in 1..=24 {
            term = term.mul(r).div(Dd::from_f64(i as f64));
            sum = sum.add(term);
        }
        let factor = 2.0_f64.powi(k as i32);
        Dd {
            hi: sum.hi * factor,
            lo: sum.lo * factor,
        }
    }

    /// ln via an f64 seed and one Newton correction in Dd.
    pub fn ln(self) -> Dd {
        debug_assert!(self.hi > 0.0, "ln of non-positive value");
        let y = Dd::from_f64(self.hi.ln());
        // y + x·e^(−y) − 1
        let e = y.neg().exp();
        y.add(self.mul(e).sub(Dd::ONE))
    }

    /// ln(1 + e^x), stable on both tails.
    pub fn softplus(self) -> Dd {
        if self.hi > 0.0 {
            let e = self.neg().exp();
            self.add(Dd::ONE.add(e).ln())
        } else {
            Dd::ONE.add(self.exp()).ln()
        }
    }

    pub fn sigmoid(self) -> Dd {
        if self.hi >= 0.0 {
            Dd::ONE.div(Dd::ONE.add(self.neg().exp()))
        } else {
            let e = self.exp();
            e.div(Dd::ONE.add(e))
        }
    }

    pub fn tanh(self) -> Dd {
        if self.hi > 300.0 {
            return Dd::ONE;
        }
        if self.hi < -300.0 {
            return Dd::ONE.neg();
        }
        if self.hi.abs() < 1e-10 {
            // x − x³/3 suffices at this scale
            let x3 = self.mul(self).mul(self);
            return self.sub(x3.scale(1.0 / 3.0));
        }
        let e = self.scale(2.0).exp();
        e.sub(Dd::ONE).div(e.add(Dd::ONE))
    }

    /// clip(0.2x + 0.5, 0, 1)
    pub fn hard_sigmoid(self) -> Dd {
        let v = self.scale(0.2).add(Dd::from_f64(0.5));
        if v.hi < 0.0 {
            Dd::ZERO
        } else if v.hi > 1.0 {
            Dd::ONE
        } else {
            v
        }
    }

    pub fn relu(self) -> Dd {
        if self.hi > 0.0 {
            self
        } else {
            Dd::ZERO
        }
    }

    /// x^γ = exp(γ·ln x) for x > 0; 0^γ := 0.
    pub fn powf(self, gamma: Dd) -> Dd {
        if self.hi == 0.0 {
            return Dd::ZERO;
        }
        gamma.mul(self.ln()).exp()
    }
}

/// Parameter tensors lifted to Dd with one coordinate optionally
/// perturbed by an exactly-representable offset.
struct DdParams {
    tensors: Vec<Vec<Dd>>,
    shapes: Vec<Vec<usize>>,
}

impl DdParams {
    fn new(model: &dyn SequenceModel, perturb: Option<(usize, usize, f64)>) -> Self {
        let mut tensors = Vec::new();
        let mut shapes = Vec::new();
        for (ti, (_, t)) in model.visit().iter().enumerate() {
            let mut vals: Vec<Dd> = t.data().iter().map(|&v| Dd::from_f64(v)).collect();
            if let Some((pt, pi, delta)) = perturb {
                if pt == ti {
                    vals[pi] = Dd::exact_sum(t.data()[pi], delta);
                }
            }
            tensors.push(vals);
            shapes.push(t.shape().to_vec());
        }
        DdParams { tensors, shapes }
    }

    fn vec(&self, i: usize) -> &[Dd] {
        &self.tensors[i]
    }

    fn rows(&self, i: usize) -> usize {
        self.shapes[i][0]
    }
}

fn matvec_dd(rows: usize, cols: usize, a: &[Dd], x: &[Dd], b: &[Dd]) -> Vec<Dd> {
    (0..rows)
        .map(|i| {
            let mut s = b[i];
            for j in 0..cols {
                s = s.add(a[i * cols + j].mul(x[j]));
            }
            s
        })
        .collect()
}

fn softmax_dd(x: &[Dd]) -> Vec<Dd> {
    let max = x.iter().map(|v| v.hi).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<Dd> = x.iter().map(|v| v.sub(Dd::from_f64(max)).exp()).collect();
    let mut sum = Dd::ZERO;
    for e in &exps {
        sum = sum.add(*e);
    }
    exps.into_iter().map(|e| e.div(sum)).collect()
}

fn cosine_rows_dd(rows: usize, width: usize, m: &[Dd], k: &[Dd]) -> Vec<Dd> {
    let eps = Dd::from_f64(crate::tensor::kernels::COSINE_EPS);
    let mut nk = Dd::ZERO;
    for v in k {
        nk = nk.add(v.mul(*v));
    }
    let nk = nk.sqrt();
    (0..rows)
        .map(|i| {
            let row = &m[i * width..(i + 1) * width];
            let mut dot = Dd::ZERO;
            let mut nr = Dd::ZERO;
            for j in 0..width {
                dot = dot.add(row[j].mul(k[j]));
                nr = nr.add(row[j].mul(row[j]));
            }
            dot.div(nr.sqrt().mul(nk).add(eps))
        })
        .collect()
}

fn circular_conv_dd(w: &[Dd], s: &[Dd]) -> Vec<Dd> {
    let n = w.len() as isize;
    let half = (s.len() / 2) as isize;
    (0..n)
        .map(|i| {
            let mut acc = Dd::ZERO;
            for (si, sv) in s.iter().enumerate() {
                let offset = si as isize - half;
                acc = acc.add(sv.mul(w[(i - offset).rem_euclid(n) as usize]));
            }
            acc
        })
        .collect()
}

fn sharpen_dd(w: &[Dd], gamma: Dd) -> Vec<Dd> {
    let w_max = w.iter().map(|v| v.hi).fold(f64::NEG_INFINITY, f64::max);
    let wm = Dd::from_f64(w_max);
    if gamma.hi == 1.0 && gamma.lo == 0.0 {
        return w.to_vec();
    }
    let powed: Vec<Dd> = w.iter().map(|v| v.div(wm).powf(gamma)).collect();
    let mut sum = Dd::ZERO;
    for p in &powed {
        sum = sum.add(*p);
    }
    powed.into_iter().map(|p| p.div(sum)).collect()
}

struct HeadOut {
    w: Vec<Dd>,
    erase: Option<Vec<Dd>>,
    add: Option<Vec<Dd>>,
}

/// One head's controls and addressing against the pre-write memory.
#[allow(clippy::too_many_arguments)]
fn head_dd(
    p: &DdParams,
    base: usize,
    write: bool,
    hidden: &[Dd],
    memory: &[Dd],
    w_prev: &[Dd],
    locations: usize,
    width: usize,
) -> HeadOut {
    let hn = hidden.len();
    let lin = |i: usize, out: usize| matvec_dd(out, hn, p.vec(i), hidden, p.vec(i + 1));
    let key: Vec<Dd> = lin(base, width).into_iter().map(Dd::relu).collect();
    let beta = lin(base + 2, 1)[0].softplus();
    let gate = lin(base + 4, 1)[0].sigmoid();
    let shift = softmax_dd(&lin(base + 6, p.rows(base + 6)));
    let gamma = lin(base + 8, 1)[0].softplus().add(Dd::ONE);
    let (erase, add) = if write {
        let e: Vec<Dd> = lin(base + 10, width).into_iter().map(Dd::hard_sigmoid).collect();
        let a: Vec<Dd> = lin(base + 12, width).into_iter().map(Dd::relu).collect();
        (Some(e), Some(a))
    } else {
        (None, None)
    };

    let sims = cosine_rows_dd(locations, width, memory, &key);
    let scaled: Vec<Dd> = sims.into_iter().map(|s| s.mul(beta)).collect();
    let wc = softmax_dd(&scaled);
    let one_minus_g = Dd::ONE.sub(gate);
    let wg: Vec<Dd> = wc
        .iter()
        .zip(w_prev)
        .map(|(c, p)| gate.mul(*c).add(one_minus_g.mul(*p)))
        .collect();
    let ws = circular_conv_dd(&wg, &shift);
    let w = sharpen_dd(&ws, gamma);
    HeadOut { w, erase, add }
}

fn bce_from_logit_dd(z: Dd, y: f64) -> Dd {
    z.neg().softplus().add(z.scale(1.0 - y))
}

fn loss_from_logits_dd(logits: &[Dd], labels: &[u8], supervision: Supervision) -> Dd {
    match supervision {
        Supervision::PerPrefix => {
            let mut acc = Dd::ZERO;
            for (z, &y) in logits.iter().zip(labels) {
                acc = acc.add(bce_from_logit_dd(*z, f64::from(y)));
            }
            acc.scale(1.0 / logits.len() as f64)
        }
        Supervision::FinalOnly => {
            bce_from_logit_dd(logits[logits.len() - 1], f64::from(labels[labels.len() - 1]))
        }
    }
}

/// Full unrolled NTM sequence loss in double-double arithmetic, with
/// one optionally perturbed parameter coordinate.
pub fn ntm_loss_dd(
    params: &NtmParams,
    inputs: &[Tensor],
    labels: &[u8],
    supervision: Supervision,
    perturb: Option<(usize, usize, f64)>,
) -> Dd {
    let g: NtmGeometry = params.geometry;
    let p = DdParams::new(params, perturb);
    // Tensor layout indices follow visit order; see NtmParamIds::from_ordered.
    let (n, w_dim, h) = (g.locations, g.width, g.hidden);

    let mut memory: Vec<Dd> = Vec::with_capacity(n * w_dim);
    for _ in 0..n {
        memory.extend_from_slice(p.vec(31));
    }
    let mut w_read = softmax_dd(p.vec(29));
    let mut w_write = softmax_dd(p.vec(30));
    let mut read: Vec<Dd> = p.vec(28).to_vec();

    let mut logits = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut cat: Vec<Dd> = x.data().iter().map(|&v| Dd::from_f64(v)).collect();
        cat.extend_from_slice(&read);
        let hidden: Vec<Dd> = matvec_dd(h, 2 + w_dim, p.vec(0), &cat, p.vec(1))
            .into_iter()
            .map(Dd::relu)
            .collect();
        let read_head = head_dd(&p, 2, false, &hidden, &memory, &w_read, n, w_dim);
        let write_head = head_dd(&p, 12, true, &hidden, &memory, &w_write, n, w_dim);

        // read from the pre-write memory
        let mut r = vec![Dd::ZERO; w_dim];
        for i in 0..n {
            for j in 0..w_dim {
                r[j] = r[j].add(read_head.w[i].mul(memory[i * w_dim + j]));
            }
        }
        // erase then add
        let e = write_head.erase.as_ref().expect("write head");
        let a = write_head.add.as_ref().expect("write head");
        let mut next_mem = Vec::with_capacity(n * w_dim);
        for i in 0..n {
            let wi = write_head.w[i];
            for j in 0..w_dim {
                let m = memory[i * w_dim + j];
                next_mem.push(m.mul(Dd::ONE.sub(wi.mul(e[j]))).add(wi.mul(a[j])));
            }
        }
        let logit = matvec_dd(1, h, p.vec(26), &hidden, p.vec(27))[0];
        logits.push(logit);

        memory = next_mem;
        w_read = read_head.w;
        w_write = write_head.w;
        read = r;
    }
    loss_from_logits_dd(&logits, labels, supervision)
}

/// Full LSTM sequence loss in double-double arithmetic.
pub fn lstm_loss_dd(
    params: &LstmParams,
    inputs: &[Tensor],
    labels: &[u8],
    supervision: Supervision,
    perturb: Option<(usize, usize, f64)>,
) -> Dd {
    let h = params.hidden;
    let p = DdParams::new(params, perturb);
    let mut hidden = vec![Dd::ZERO; h];
    let mut cell = vec![Dd::ZERO; h];
    let mut logits = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut cat: Vec<Dd> = x.data().iter().map(|&v| Dd::from_f64(v)).collect();
        cat.extend_from_slice(&hidden);
        let gate = |i: usize| matvec_dd(h, 2 + h, p.vec(i), &cat, p.vec(i + 1));
        let i_g: Vec<Dd> = gate(0).into_iter().map(Dd::sigmoid).collect();
        let f_g: Vec<Dd> = gate(2).into_iter().map(Dd::sigmoid).collect();
        let c_g: Vec<Dd> = gate(4).into_iter().map(Dd::tanh).collect();
        let o_g: Vec<Dd> = gate(6).into_iter().map(Dd::sigmoid).collect();
        for k in 0..h {
            cell[k] = f_g[k].mul(cell[k]).add(i_g[k].mul(c_g[k]));
            hidden[k] = o_g[k].mul(cell[k].tanh());
        }
        logits.push(matvec_dd(1, h, p.vec(8), &hidden, p.vec(9))[0]);
    }
    loss_from_logits_dd(&logits, labels, supervision)
}

/// Analytic tape gradients against double-double central differences,
/// per the gradient-check contract: max over all coordinates of
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn max_rel_error_vs_dd<F>(model: &dyn SequenceModel, sample: &LabeledSample, h: f64, dd_loss: F) -> f64
where
    F: Fn(Option<(usize, usize, f64)>) -> Dd,
{
    let inputs = crate::dyck::encode(&sample.word);
    let analytic: Vec<Tensor> = {
        let mut tape = crate::tensor::Tape::new();
        let logits = model.forward_logits_tape(&mut tape, &inputs);
        let loss = crate::train::sequence_loss_tape(
            &mut tape,
            &logits,
            &sample.prefix_labels,
            Supervision::PerPrefix,
        );
        let grads = tape.backward(loss).expect("scalar loss");
        (0..model.visit().len())
            .map(|i| grads.tensor(&tape, tape.value_id(i)))
            .collect()
    };
    let mut max_rel = 0.0f64;
    for (ti, (_, t)) in model.visit().iter().enumerate() {
        for i in 0..t.len() {
            let fp = dd_loss(Some((ti, i, h)));
            let fm = dd_loss(Some((ti, i, -h)));
            let numeric = fp.sub(fm).to_f64() / (2.0 * h);
            let a = analytic[ti].at(i);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(v: Dd, expect: f64, tol: f64) {
        assert!(
            (v.to_f64() - expect).abs() <= tol,
            "{} vs {expect}",
            v.to_f64()
        );
    }

    #[test]
    fn arithmetic_identities() {
        let a = Dd::from_f64(0.1);
        let b = Dd::from_f64(0.2);
        // 0.1 + 0.2 in Dd captures the f64 representation error
        let sum = a.add(b);
        assert!(sum.lo != 0.0 || sum.hi == 0.30000000000000004);
        assert_close(a.mul(b), 0.02, 1e-17);
        assert_close(Dd::from_f64(2.0).sqrt(), std::f64::consts::SQRT_2, 1e-16);
        assert_close(Dd::from_f64(1.0).div(Dd::from_f64(3.0)), 1.0 / 3.0, 1e-16);
    }

    #[test]
    fn transcendental_accuracy_beats_f64() {
        // exp(1) in Dd should reproduce e to the last f64 bit and carry
        // a meaningful tail.
        let e = Dd::ONE.exp();
        assert_eq!(e.hi, std::f64::consts::E);
        assert!(e.lo.abs() > 0.0 && e.lo.abs() < 1e-15);
        let l = Dd::from_f64(10.0).ln();
        assert_eq!(l.hi, 10.0_f64.ln());
        // round trip at Dd precision: exp(ln 10) − 10 ≈ 0 well below ulp
        let rt = l.exp().sub(Dd::from_f64(10.0));
        assert!(rt.to_f64().abs() < 1e-26, "{}", rt.to_f64());
    }

    #[test]
    fn sigmoid_tanh_softplus_match_f64_kernels() {
        use crate::tensor::kernels;
        for x in [-5.0, -0.3, 0.0, 0.7, 4.2, 30.0] {
            let dx = Dd::from_f64(x);
            assert!((dx.sigmoid().to_f64() - kernels::sigmoid(x)).abs() < 1e-15);
            assert!((dx.softplus().to_f64() - kernels::softplus(x)).abs() < 1e-15);
            assert!((dx.tanh().to_f64() - x.tanh()).abs() < 1e-15);
            assert!((dx.hard_sigmoid().to_f64() - kernels::hard_sigmoid(x)).abs() < 1e-16);
        }
    }

    #[test]
    fn exact_sum_keeps_tiny_offsets() {
        let x = Dd::exact_sum(0.3, 1e-5);
        assert_eq!(x.sub(Dd::from_f64(0.3)).to_f64(), 1e-5);
    }

    #[test]
    fn dd_forward_matches_f64_forward_closely() {
        use crate::rng::seeded;
        let geometry = NtmGeometry {
            locations: 8,
            width: 4,
            hidden: 6,
            shift_window: 3,
        };
        let params = NtmParams::init(geometry, &mut seeded(3, 1));
        let sample = LabeledSample::new("uduudd".parse().unwrap());
        let inputs = crate::dyck::encode(&sample.word);
        let probs = crate::ntm::forward_sequence(&params, &inputs);
        let f64_loss =
            crate::train::sequence_loss(&probs, &sample.prefix_labels, Supervision::PerPrefix)
            .unwrap();
        let dd_loss = ntm_loss_dd(&params, &inputs, &sample.prefix_labels, Supervision::PerPrefix, None);
        assert!(
            (f64_loss - dd_loss.to_f64()).abs() < 1e-12,
            "{f64_loss} vs {}",
            dd_loss.to_f64()
        );
    }
}
