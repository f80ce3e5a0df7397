use super::{Scalar, Tensor};
use crate::rng::Rng;

/// A learnable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Glorot-uniform init with the tanh gain (5/3).
    pub fn glorot(name: impl Into<String>, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = 5.0 / 3.0 * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = Tensor::from_fn(shape, |_| T::lit((2.0 * rng.uniform() - 1.0) * limit));
        Self::new(name, value)
    }
}
