use serde::{Deserialize, Serialize};

use super::{Real, Tensors, TwoTowerParams};

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0005,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensors<T>,
    pub v: Tensors<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &TwoTowerParams<T>) -> Self {
        AdamState {
            m: Tensors::zeros_like(&params.tensors),
            v: Tensors::zeros_like(&params.tensors),
            t: 0,
        }
    }
}

/// One AdamW update of a single tensor at step `t` (1-based).
///
/// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·λ·θ`, the decay term using θ before the
/// update and applied only when `decay` is set.
pub fn adamw_update<T: Real>(theta: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, opt: &AdamW, decay: bool) {
    let b1 = T::of(opt.beta1);
    let b2 = T::of(opt.beta2);
    let one = T::one();
    let bc1 = T::of(1.0 - opt.beta1.powi(t as i32));
    let bc2 = T::of(1.0 - opt.beta2.powi(t as i32));
    let lr = T::of(opt.lr);
    let eps = T::of(opt.epsilon);
    let wd = T::of(if decay { opt.lr * opt.weight_decay } else { 0.0 });
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let old = theta[i];
        theta[i] = old - lr * (m_hat / (v_hat.sqrt() + eps)) - wd * old;
    }
}

/// Applies one AdamW step to every parameter tensor. Weight decay covers the
/// weight matrices and the user table, not the biases.
pub fn adamw_step<T: Real>(params: &mut TwoTowerParams<T>, grads: &Tensors<T>, state: &mut AdamState<T>, opt: &AdamW) {
    state.t += 1;
    let t = state.t;
    let grads = grads.parts();
    let ms = state.m.parts_mut();
    let vs = state.v.parts_mut();
    for (((theta, decay), (g, _)), ((m, _), (v, _))) in params
        .tensors
        .parts_mut()
        .into_iter()
        .zip(grads)
        .zip(ms.into_iter().zip(vs))
    {
        adamw_update(theta, g, m, v, t, opt, decay);
    }
}
