//! Per-channel batch normalization over every axis except axis 1.

use super::{Param, Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

/// Batch statistics of one train-mode call; applied to the running
/// estimates by [`BatchNorm::commit`].
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!("batchnorm needs (B, C, ...), got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Train-mode normalization with batch statistics. Pure: the running
/// estimates are not touched.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> Result<(Tensor<T>, BnCache<T>, BnStats<T>)> {
    let (b, c, s) = layout(x.shape())?;
    if b < 2 {
        return Err(Error::InvalidArgument("batchnorm in train mode needs a batch of at least 2".into()));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!("batchnorm over {c} channels got {} scales", gamma.len())));
    }
    let n = b * s;
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for ci in 0..c {
        let rows = (0..b).map(|bi| &xd[(bi * c + ci) * s..(bi * c + ci + 1) * s]);
        let m = rows.clone().flatten().map(|v| v.f64()).sum::<f64>() / n as f64;
        let v = rows.flatten().map(|v| (v.f64() - m).powi(2)).sum::<f64>() / n as f64;
        let is = 1.0 / (v + BN_EPS).sqrt();
        mean[ci] = T::lit(m);
        var[ci] = T::lit(v);
        inv_std[ci] = T::lit(is);
        let (m, is) = (T::lit(m), T::lit(is));
        for bi in 0..b {
            let off = (bi * c + ci) * s;
            for k in off..off + s {
                let h = (xd[k] - m) * is;
                xhat[k] = h;
                y[k] = gamma[ci] * h + beta[ci];
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), y)?,
        BnCache { xhat, inv_std, shape: x.shape().to_vec() },
        BnStats { mean, var, count: n },
    ))
}

/// Infer-mode normalization: a fixed per-channel affine map.
pub fn batchnorm_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
) -> Result<Tensor<T>> {
    let (b, c, s) = layout(x.shape())?;
    if gamma.len() != c {
        return Err(Error::Shape(format!("batchnorm over {c} channels got {} scales", gamma.len())));
    }
    let eps = T::lit(BN_EPS);
    let scale: Vec<T> = (0..c).map(|ci| gamma[ci] / (var[ci] + eps).sqrt()).collect();
    let mut y = x.data().to_vec();
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * s;
            for v in &mut y[off..off + s] {
                *v = (*v - mean[ci]) * scale[ci] + beta[ci];
            }
        }
    }
    Tensor::from_vec(x.shape(), y)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(
    dy: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &[T],
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    dy.expect_shape(&cache.shape, "batchnorm output gradient")?;
    let (b, c, s) = layout(&cache.shape)?;
    let n = T::lit((b * s) as f64);
    let dyd = dy.data();
    let mut dx = vec![T::zero(); dyd.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ci in 0..c {
        let idx = || (0..b).flat_map(move |bi| (bi * c + ci) * s..(bi * c + ci + 1) * s);
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for k in idx() {
            sum_dy += dyd[k];
            sum_dy_xhat += dyd[k] * cache.xhat[k];
        }
        dgamma[ci] = sum_dy_xhat;
        dbeta[ci] = sum_dy;
        // dxhat = dy·gamma, so the reductions of dxhat are gamma times these.
        let k0 = gamma[ci] * cache.inv_std[ci] / n;
        for k in idx() {
            dx[k] = k0 * (n * dyd[k] - sum_dy - cache.xhat[k] * sum_dy_xhat);
        }
    }
    Ok((Tensor::from_vec(&cache.shape, dx)?, dgamma, dbeta))
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (y, cache, stats) = batchnorm_train(x, self.gamma.value.data(), self.beta.value.data())?;
        self.commit(&stats);
        Ok((y, cache))
    }

    /// Fold one batch's statistics into the running estimates
    /// (unbiased variance, momentum [`BN_MOMENTUM`]).
    pub fn commit(&mut self, stats: &BnStats<T>) {
        let m = T::lit(BN_MOMENTUM);
        let one_m = T::lit(1.0 - BN_MOMENTUM);
        let unbias = T::lit(stats.count as f64 / (stats.count as f64 - 1.0));
        for ci in 0..self.channels() {
            self.running_mean[ci] = m * self.running_mean[ci] + one_m * stats.mean[ci];
            self.running_var[ci] = m * self.running_var[ci] + one_m * stats.var[ci] * unbias;
        }
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        batchnorm_infer(
            x,
            self.gamma.value.data(),
            self.beta.value.data(),
            &self.running_mean,
            &self.running_var,
        )
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (dx, dg, db) = batchnorm_backward(dy, cache, self.gamma.value.data())?;
        for (g, d) in self.gamma.grad.data_mut().iter_mut().zip(dg) {
            *g += d;
        }
        for (g, d) in self.beta.grad.data_mut().iter_mut().zip(db) {
            *g += d;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn channel_moments(y: &Tensor<f64>, ci: usize) -> (f64, f64) {
        let (b, c, s) = layout(y.shape()).unwrap();
        let vals: Vec<f64> =
            (0..b).flat_map(|bi| y.data()[(bi * c + ci) * s..(bi * c + ci + 1) * s].to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = Rng::new(3);
        let x = Tensor::<f64>::from_fn(&[4, 3, 5, 2], |_| rng.normal() * 7.0 + 3.0);
        let (y, _, _) = batchnorm_train(&x, &[1.0; 3], &[0.0; 3]).unwrap();
        for ci in 0..3 {
            let (m, v) = channel_moments(&y, ci);
            assert!(m.abs() <= 1e-6);
            assert!((v - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn standardized_input_passes_through() {
        // Two items per channel at +-1: zero mean, unit variance.
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let (y, _, _) = batchnorm_train(&x, &[1.0; 2], &[0.0; 2]).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_of_one_rejected_in_train_mode() {
        let x = Tensor::<f32>::zeros(&[1, 2]);
        assert!(batchnorm_train(&x, &[1.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn infer_mode_is_affine() {
        let bn = BatchNorm::<f64> {
            gamma: Param::new("g", Tensor::from_vec(&[2], vec![2.0, 0.5]).unwrap()),
            beta: Param::new("b", Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap()),
            running_mean: vec![0.3, -0.2],
            running_var: vec![4.0, 0.25],
        };
        let f = |v: f64| bn.forward_infer(&Tensor::from_vec(&[1, 2], vec![v, v]).unwrap()).unwrap();
        let (y0, y1, y2) = (f(0.0), f(1.0), f(2.0));
        for c in 0..2 {
            let d1 = y1.data()[c] - y0.data()[c];
            let d2 = y2.data()[c] - y1.data()[c];
            assert!((d1 - d2).abs() < 1e-12);
        }
        assert_eq!(f(1.0), f(1.0));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::<f64>::new("bn", 1);
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        bn.forward_train(&x).unwrap();
        assert!((bn.running_mean[0] - 0.01 * 2.0).abs() < 1e-12);
        // batch var 1.0, unbiased 2.0
        assert!((bn.running_var[0] - (0.99 + 0.01 * 2.0)).abs() < 1e-12);
    }
}
