//! Adam with bias correction.

use super::bundle::NetworkBundle;
use super::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> AdamParams {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl NetworkBundle {
    /// One Adam step over exactly the parameters present in `grads`;
    /// everything else is untouched (that is how modules get frozen).
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, opt: AdamParams) {
        self.adam_step += 1;
        let t = self.adam_step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for (name, g) in grads {
            let p = self
                .params
                .get_mut(name)
                .unwrap_or_else(|| panic!("adam_step: unknown parameter {name}"));
            let m = self
                .adam_m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&p.shape));
            let v = self
                .adam_v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&p.shape));
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = opt.beta1 * m.data[i] + (1.0 - opt.beta1) * gi;
                v.data[i] = opt.beta2 * v.data[i] + (1.0 - opt.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
            }
        }
    }
}

/// Standalone Adam state for a single tensor (used for surfel features
/// during fine-tuning, which live outside the bundle).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    step: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> AdamState {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }

    pub fn step(&mut self, param: &mut Tensor, grad: &Tensor, opt: AdamParams) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for i in 0..param.data.len() {
            let gi = grad.data[i];
            self.m.data[i] = opt.beta1 * self.m.data[i] + (1.0 - opt.beta1) * gi;
            self.v.data[i] = opt.beta2 * self.v.data[i] + (1.0 - opt.beta2) * gi * gi;
            let mhat = self.m.data[i] / bc1;
            let vhat = self.v.data[i] / bc2;
            param.data[i] -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
        }
    }
}
