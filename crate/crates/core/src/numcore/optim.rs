//! AdamW with decoupled weight decay and bias-corrected moments.

use serde::{Deserialize, Serialize};

use super::param::ParamSet;
use super::real::Real;
use super::tensor::Tensor;
use super::NumError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub hyper: AdamWConfig,
}

impl<T: Real> AdamWState<T> {
    pub fn new(params: &ParamSet<T>, hyper: AdamWConfig) -> Self {
        let m: Vec<_> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        let v = m.clone();
        AdamWState { m, v, step: 0, hyper }
    }

    /// One update using the grads currently stored in `params`.
    ///
    /// Decay is applied to the parameter itself (`p ← p·(1 − lr·wd)`) before
    /// the moment update, never folded into the gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<(), NumError> {
        if self.m.len() != params.len() {
            return Err(NumError::Config(format!(
                "optimizer tracks {} tensors but model has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter_mut().enumerate() {
            if p.grad.shape() != p.value.shape() || self.m[i].shape() != p.value.shape() {
                return Err(NumError::ShapeMismatch {
                    context: "adamw_step",
                    expected: p.value.shape().to_vec(),
                    got: p.grad.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let h = self.hyper;
        let t = self.step as i32;
        let bc1 = T::f(1.0 - h.beta1.powi(t));
        let bc2 = T::f(1.0 - h.beta2.powi(t));
        let (b1, b2) = (T::f(h.beta1), T::f(h.beta2));
        let (one_b1, one_b2) = (T::f(1.0 - h.beta1), T::f(1.0 - h.beta2));
        let lr = T::f(h.lr);
        let eps = T::f(h.eps);
        let decay = T::f(1.0 - h.lr * h.weight_decay);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = p.grad.data();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales grads so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm<T: Real>(params: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = params.grad_norm().as_f64();
    if norm > max_norm && norm > 0.0 {
        params.scale_grads(T::f(max_norm / norm));
    }
    norm
}
