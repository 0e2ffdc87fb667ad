use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub t: u64,
    pub m: Vec<Array2<T>>,
    pub v: Vec<Array2<T>>,
}

pub fn global_norm<T: Scalar>(grads: &[Array2<T>]) -> f64 {
    grads
        .iter()
        .map(|g| g.iter().map(|&x| x.as_f64() * x.as_f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scale `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Array2<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let scale = T::of(max_norm / norm);
        grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * scale));
    }
    norm
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, shapes: &[Array2<T>]) -> Self {
        let zeros = || shapes.iter().map(|p| Array2::zeros(p.dim())).collect();
        AdamW { config, t: 0, m: zeros(), v: zeros() }
    }

    /// One update with learning rate `lr`. Gradients are clipped first.
    /// Returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &mut [Array2<T>], mut grads: Vec<Array2<T>>, lr: f64) -> f64 {
        let c = self.config;
        let norm = clip_grad_norm(&mut grads, c.clip_norm);
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        let decay = T::of(1.0 - lr * c.weight_decay);
        for (((p, g), m), v) in params.iter_mut().zip(&grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p * decay - step * *m / ((*v * inv_bc2).sqrt() + eps);
            });
        }
        norm
    }
}
