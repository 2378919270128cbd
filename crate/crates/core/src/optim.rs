//! Adaptive-moment optimiser and the cosine-to-zero learning-rate schedule.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// `lr * (1 + cos(pi * step / total)) / 2`, reaching zero at `total`.
pub fn cosine_lr(lr: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    let t = (step.min(total)) as f64 / total as f64;
    0.5 * lr * (1.0 + math::cos(core::f64::consts::PI * t))
}

/// Adam moments for a list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam { beta1, beta2, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    /// One update with learning rate `lr`.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::InvalidArgument("optimiser state does not match parameters".into()));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - math::powi(b1, self.step);
        let c2 = 1.0 - math::powi(b2, self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch { op: "adam", left: p.shape().to_vec(), right: g.shape().to_vec() });
            }
            let (pd, gd) = (p.data_mut(), g.data());
            for (i, &gi) in gd.iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (1.0 - b1) * gi;
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mh = m.data()[i] / c1;
                let vh = v.data()[i] / c2;
                pd[i] -= lr * mh / (math::sqrt(vh) + self.eps);
            }
        }
        Ok(())
    }
}
