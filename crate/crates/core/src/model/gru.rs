//! One direction of the sentence encoder: a GRU whose candidate activation
//! is the leaky rectifier.
//!
//! ```text
//! z  = σ(Wz·x + Uz·h + bz)
//! r  = σ(Wr·x + Ur·h + br)
//! h~ = lrel(Wh·x + Uh·(r ⊙ h) + bh)
//! h' = z ⊙ h + (1 − z) ⊙ h~
//! ```

use crate::numerics::{
    lrel, lrel_grad, matvec_acc, matvec_t_acc, outer_acc, sigmoid, ParamId, ParamStore, Tensor,
};

#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub w_update: ParamId,
    pub w_reset: ParamId,
    pub w_cand: ParamId,
    pub u_update: ParamId,
    pub u_reset: ParamId,
    pub u_cand: ParamId,
    pub b_update: ParamId,
    pub b_reset: ParamId,
    pub b_cand: ParamId,
}

impl GruIds {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        mut init: impl FnMut(Vec<usize>) -> Tensor,
    ) -> Self {
        let mut w = |s: &mut ParamStore, name: &str, dims: Vec<usize>| {
            s.insert(format!("{prefix}.{name}"), init(dims))
        };
        let w_update = w(store, "w_update", vec![hidden, input]);
        let w_reset = w(store, "w_reset", vec![hidden, input]);
        let w_cand = w(store, "w_cand", vec![hidden, input]);
        let u_update = w(store, "u_update", vec![hidden, hidden]);
        let u_reset = w(store, "u_reset", vec![hidden, hidden]);
        let u_cand = w(store, "u_cand", vec![hidden, hidden]);
        let mut b = |name: &str| store.insert(format!("{prefix}.{name}"), Tensor::zeros(vec![hidden]));
        GruIds {
            w_update,
            w_reset,
            w_cand,
            u_update,
            u_reset,
            u_cand,
            b_update: b("b_update"),
            b_reset: b("b_reset"),
            b_cand: b("b_cand"),
        }
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub h_prev: Vec<f64>,
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub reset_h: Vec<f64>,
    pub cand_pre: Vec<f64>,
    pub cand: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn step(values: &[Tensor], ids: &GruIds, x: &[f64], h_prev: &[f64]) -> GruStep {
    let hidden = h_prev.len();
    let gate = |w: ParamId, u: ParamId, b: ParamId, h_in: &[f64]| {
        let mut a = values[b.0].data.clone();
        matvec_acc(&values[w.0], x, &mut a);
        matvec_acc(&values[u.0], h_in, &mut a);
        a
    };
    let mut update = gate(ids.w_update, ids.u_update, ids.b_update, h_prev);
    update.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut reset = gate(ids.w_reset, ids.u_reset, ids.b_reset, h_prev);
    reset.iter_mut().for_each(|v| *v = sigmoid(*v));
    let reset_h: Vec<f64> = reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let cand_pre = gate(ids.w_cand, ids.u_cand, ids.b_cand, &reset_h);
    let cand: Vec<f64> = cand_pre.iter().map(|&v| lrel(v)).collect();
    let h = (0..hidden)
        .map(|i| update[i] * h_prev[i] + (1.0 - update[i]) * cand[i])
        .collect();
    GruStep {
        h_prev: h_prev.to_vec(),
        update,
        reset,
        reset_h,
        cand_pre,
        cand,
        h,
    }
}

/// Runs the recurrence over `inputs` from a zero state, returning every step.
pub fn run(values: &[Tensor], ids: &GruIds, inputs: &[&[f64]], hidden: usize) -> Vec<GruStep> {
    let mut steps: Vec<GruStep> = Vec::with_capacity(inputs.len());
    let zero = vec![0.0; hidden];
    for x in inputs {
        let h_prev = steps.last().map_or(zero.as_slice(), |s| s.h.as_slice());
        let s = step(values, ids, x, h_prev);
        steps.push(s);
    }
    steps
}

/// Backpropagates `d_last` (gradient w.r.t. the final hidden state) through
/// the whole run. Parameter gradients are accumulated into `grads`; the
/// gradient w.r.t. each input is written to `d_inputs`.
pub fn backward(
    values: &[Tensor],
    grads: &mut [Tensor],
    ids: &GruIds,
    inputs: &[&[f64]],
    steps: &[GruStep],
    d_last: &[f64],
    d_inputs: &mut [Vec<f64>],
) {
    let hidden = d_last.len();
    let mut dh = d_last.to_vec();
    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        let x = inputs[t];
        let dx = &mut d_inputs[t];
        let mut dh_prev = vec![0.0; hidden];
        let mut d_update = vec![0.0; hidden];
        let mut d_cand_pre = vec![0.0; hidden];
        for i in 0..hidden {
            dh_prev[i] = dh[i] * s.update[i];
            let dz = dh[i] * (s.h_prev[i] - s.cand[i]);
            d_update[i] = dz * s.update[i] * (1.0 - s.update[i]);
            d_cand_pre[i] = dh[i] * (1.0 - s.update[i]) * lrel_grad(s.cand_pre[i]);
        }

        // candidate
        outer_acc(&mut grads[ids.w_cand.0], &d_cand_pre, x);
        outer_acc(&mut grads[ids.u_cand.0], &d_cand_pre, &s.reset_h);
        add_into(&mut grads[ids.b_cand.0].data, &d_cand_pre);
        matvec_t_acc(&values[ids.w_cand.0], &d_cand_pre, dx);
        let mut d_reset_h = vec![0.0; hidden];
        matvec_t_acc(&values[ids.u_cand.0], &d_cand_pre, &mut d_reset_h);
        let mut d_reset = vec![0.0; hidden];
        for i in 0..hidden {
            d_reset[i] = d_reset_h[i] * s.h_prev[i] * s.reset[i] * (1.0 - s.reset[i]);
            dh_prev[i] += d_reset_h[i] * s.reset[i];
        }

        // reset and update gates
        for (d, w, u, b) in [
            (&d_reset, ids.w_reset, ids.u_reset, ids.b_reset),
            (&d_update, ids.w_update, ids.u_update, ids.b_update),
        ] {
            outer_acc(&mut grads[w.0], d, x);
            outer_acc(&mut grads[u.0], d, &s.h_prev);
            add_into(&mut grads[b.0].data, d);
            matvec_t_acc(&values[w.0], d, dx);
            matvec_t_acc(&values[u.0], d, &mut dh_prev);
        }
        dh = dh_prev;
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
