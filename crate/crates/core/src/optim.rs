use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    /// Fresh state with β1 = 0.9, β2 = 0.999, ε = 1e−8.
    pub fn new(params: &[Param], lr: f64) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }
}

/// One bias-corrected Adam update using each parameter's `grad` buffer.
pub fn adam_step(params: &mut [Param], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(dim_err!("adam: {} params vs {} moment buffers", params.len(), state.m.len()));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.value.shape() != m.shape() || p.grad.shape() != m.shape() {
            return Err(dim_err!("adam: parameter {} shape {:?} vs state {:?}", p.name, p.value.shape(), m.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(state.beta1, t as f64);
    let c2 = 1.0 - libm::pow(state.beta2, t as f64);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    for ((p, m), v) in params.iter_mut().zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        if !p.requires_grad {
            continue;
        }
        let g = p.grad.data();
        let (md, vd) = (m.data_mut(), v.data_mut());
        let w = p.value.data_mut();
        for i in 0..w.len() {
            md[i] = b1 * md[i] + (1.0 - b1) * g[i];
            vd[i] = b2 * vd[i] + (1.0 - b2) * g[i] * g[i];
            let mh = md[i] / c1;
            let vh = vd[i] / c2;
            w[i] -= lr * mh / (libm::sqrt(vh) + eps);
        }
    }
    Ok(())
}
