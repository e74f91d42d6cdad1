//! Shared numeric kernels used by both the plain (inference) ops and
//! the tape-recorded (training) ops. Keeping a single implementation
//! per operation makes the two paths bit-identical.

/// Epsilon in the cosine-similarity denominator, guarding all-zero rows.
pub const COSINE_EPS: f64 = 1e-8;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// clip(0.2x + 0.5, 0, 1)
pub fn hard_sigmoid(x: f64) -> f64 {
    (0.2 * x + 0.5).clamp(0.0, 1.0)
}

/// Subgradient of hard_sigmoid; 0 at and outside the kinks x = ±2.5.
pub fn hard_sigmoid_grad(x: f64) -> f64 {
    if x > -2.5 && x < 2.5 {
        0.2
    } else {
        0.0
    }
}

/// Subgradient of relu with relu'(0) := 0.
pub fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Numerically stable binary cross-entropy of sigmoid(z) against label y.
pub fn bce_from_logit(z: f64, y: f64) -> f64 {
    softplus(-z) + (1.0 - y) * z
}

/// out[i] = sum_j a[i, j] * x[j]
pub fn matvec(rows: usize, cols: usize, a: &[f64], x: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let row = &a[i * cols..(i + 1) * cols];
        let mut s = 0.0;
        for j in 0..cols {
            s += row[j] * x[j];
        }
        out[i] = s;
    }
}

/// out[j] = sum_i x[i] * a[i, j]  (transposed product)
pub fn mat_t_vec(rows: usize, cols: usize, a: &[f64], x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..rows {
        let xi = x[i];
        let row = &a[i * cols..(i + 1) * cols];
        for j in 0..cols {
            out[j] += xi * row[j];
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(x: &[f64], out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// a·b / (‖a‖‖b‖ + ε)
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt() + COSINE_EPS)
}

/// Cosine similarity of `k` against every row of the `rows × width` matrix `m`.
pub fn cosine_rows(rows: usize, width: usize, m: &[f64], k: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        out[i] = cosine_similarity(&m[i * width..(i + 1) * width], k);
    }
}

/// Circular convolution of weighting `w` with shift distribution `s`
/// over centered offsets; `s.len()` must be odd and ≤ `w.len()`.
///
/// out[i] = sum_o s[o + half] * w[(i − o) mod n]
pub fn circular_convolve(w: &[f64], s: &[f64], out: &mut [f64]) {
    let n = w.len() as isize;
    let half = (s.len() / 2) as isize;
    for i in 0..n {
        let mut acc = 0.0;
        for (si, &sv) in s.iter().enumerate() {
            let offset = si as isize - half;
            let src = (i - offset).rem_euclid(n);
            acc += sv * w[src as usize];
        }
        out[i as usize] = acc;
    }
}

/// Result of [`sharpen`], keeping the internals needed by the backward pass.
pub struct SharpenCache {
    /// Largest input weight (power base normalizer).
    pub w_max: f64,
    /// Sum of (w_i / w_max)^γ.
    pub denom: f64,
}

/// out[i] = w[i]^γ / Σ_j w[j]^γ, computed on w/w_max for stability.
/// γ = 1 is an exact no-op. Panics on an all-zero weighting.
pub fn sharpen(w: &[f64], gamma: f64, out: &mut [f64]) -> SharpenCache {
    let w_max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(w_max > 0.0, "sharpen: weighting is all zero");
    if gamma == 1.0 {
        out.copy_from_slice(w);
        let denom = w.iter().map(|&v| v / w_max).sum();
        return SharpenCache { w_max, denom };
    }
    let mut denom = 0.0;
    for (o, &v) in out.iter_mut().zip(w) {
        let p = (v / w_max).powf(gamma);
        *o = p;
        denom += p;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
    SharpenCache { w_max, denom }
}

/// out[i] = g * a[i] + (1 − g) * b[i]
pub fn interpolate(a: &[f64], b: &[f64], g: f64, out: &mut [f64]) {
    let inv = 1.0 - g;
    for i in 0..a.len() {
        out[i] = g * a[i] + inv * b[i];
    }
}

/// Erase-then-add memory update:
/// out[i, j] = m[i, j] * (1 − w[i] * e[j]) + w[i] * a[j]
pub fn erase_add(
    rows: usize,
    width: usize,
    m: &[f64],
    w: &[f64],
    e: &[f64],
    a: &[f64],
    out: &mut [f64],
) {
    for i in 0..rows {
        let wi = w[i];
        let row = &m[i * width..(i + 1) * width];
        let dst = &mut out[i * width..(i + 1) * width];
        for j in 0..width {
            dst[j] = row[j] * (1.0 - wi * e[j]) + wi * a[j];
        }
    }
}
