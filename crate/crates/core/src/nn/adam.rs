//! Adam with L2 regularization folded into the gradient, no clipping.

use super::{Param, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.95, beta2: 0.999, eps: 1e-8, l2: 1e-4 }
    }
}

/// Moment accumulators, one buffer per parameter in model order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Param<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self { t: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, cfg: &AdamConfig, params: &mut [&mut Param<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t = self.t.checked_add(1).expect("adam step counter overflow");
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
        let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
        let (lr, eps, l2) = (T::lit(cfg.lr), T::lit(cfg.eps), T::lit(cfg.l2));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.value.len() != m.len() {
                return Err(Error::Shape(format!("optimizer state does not match {}", p.name)));
            }
            let Param { value, grad, .. } = &mut **p;
            for (((w, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g + l2 * *w;
                *mi = b1 * *mi + c1 * g;
                *vi = b2 * *vi + c2 * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
