//! Dense kernels, activations, parameter storage, Adam and finite-difference
//! gradient checking.

mod adam;
mod gradcheck;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{ParamEntry, ParamId, ParamStore, Precision};
pub use tensor::Tensor;

pub const LREL_SLOPE: f64 = 0.1;

/// Leaky rectifier with slope 0.1 on the negative side.
#[inline]
pub fn lrel(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LREL_SLOPE * x
    }
}

/// Derivative of [`lrel`] at `x`; 1 at exactly zero.
#[inline]
pub fn lrel_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LREL_SLOPE
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    out
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `out = m · x` for a row-major `rows × cols` matrix.
pub fn matvec(m: &Tensor, x: &[f64], out: &mut [f64]) {
    let (rows, cols) = m.shape2();
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&m.data[r * cols..(r + 1) * cols], x);
    }
}

/// `out += m · x`.
pub fn matvec_acc(m: &Tensor, x: &[f64], out: &mut [f64]) {
    let (rows, cols) = m.shape2();
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o += dot(&m.data[r * cols..(r + 1) * cols], x);
    }
}

/// `out += mᵀ · g`.
pub fn matvec_t_acc(m: &Tensor, g: &[f64], out: &mut [f64]) {
    let (rows, cols) = m.shape2();
    debug_assert_eq!(g.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &m.data[r * cols..(r + 1) * cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += gr * w;
        }
    }
}

/// `grad += g · xᵀ`.
pub fn outer_acc(grad: &mut Tensor, g: &[f64], x: &[f64]) {
    let (rows, cols) = grad.shape2();
    debug_assert_eq!(g.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &mut grad.data[r * cols..(r + 1) * cols];
        for (w, &xv) in row.iter_mut().zip(x) {
            *w += gr * xv;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
