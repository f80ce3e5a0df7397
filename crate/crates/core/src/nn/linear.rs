use super::{Param, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Fully connected layer, weight `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, bias: bool, rng: &mut Rng) -> Self {
        Self {
            weight: Param::glorot(format!("{name}.weight"), &[outputs, inputs], inputs, outputs, rng),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[outputs]))),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, i) = match *x.shape() {
            [b, i] if i == self.inputs() => (b, i),
            ref s => {
                return Err(Error::Shape(format!(
                    "{}: expected (B, {}), got {s:?}",
                    self.weight.name,
                    self.inputs()
                )))
            }
        };
        let o = self.outputs();
        let mut y = vec![T::zero(); b * o];
        if let Some(bias) = &self.bias {
            for row in y.chunks_mut(o) {
                row.copy_from_slice(bias.value.data());
            }
        }
        T::gemm(b, i, o, x.data(), false, self.weight.value.data(), true, T::one(), &mut y);
        Tensor::from_vec(&[b, o], y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, i, o) = (x.dim(0), self.inputs(), self.outputs());
        dy.expect_shape(&[b, o], "linear output gradient")?;
        T::gemm(o, b, i, dy.data(), true, x.data(), false, T::one(), self.weight.grad.data_mut());
        if let Some(bias) = &mut self.bias {
            let g = bias.grad.data_mut();
            for row in dy.data().chunks(o) {
                for (gj, &d) in g.iter_mut().zip(row) {
                    *gj += d;
                }
            }
        }
        let mut dx = vec![T::zero(); b * i];
        T::gemm(b, o, i, dy.data(), false, self.weight.value.data(), false, T::zero(), &mut dx);
        Tensor::from_vec(&[b, i], dx)
    }
}
