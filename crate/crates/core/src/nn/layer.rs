use super::batchnorm::BnCache;
use super::conv::{ConvCache, ConvTCache};
use super::{BatchNorm, Conv2d, ConvTranspose2d, Linear, Param, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    TransposedConv2d,
    FullyConnected,
    BatchNorm,
    Tanh,
    Reshape,
}

/// Static description of a layer, for summaries and architecture checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filter: (usize, usize),
    pub stride: (usize, usize),
    pub units: usize,
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvT(ConvTranspose2d<T>),
    Linear(Linear<T>),
    BatchNorm(BatchNorm<T>),
    Tanh,
    /// Reshape every item to the given (non-batch) shape.
    Reshape(Vec<usize>),
}

#[derive(Clone, Debug)]
pub enum Cache<T> {
    Conv(ConvCache<T>),
    ConvT(ConvTCache<T>),
    Linear(Tensor<T>),
    BatchNorm(BnCache<T>),
    Tanh(Tensor<T>),
    Reshape(Vec<usize>),
}

fn reshape_items<T: Scalar>(x: &Tensor<T>, item: &[usize]) -> Result<Tensor<T>> {
    let mut shape = vec![x.dim(0)];
    shape.extend_from_slice(item);
    x.clone().reshape(&shape)
}

impl<T: Scalar> Layer<T> {
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        Ok(match self {
            Layer::Conv(l) => {
                let (y, c) = l.forward(x)?;
                (y, Cache::Conv(c))
            }
            Layer::ConvT(l) => {
                let (y, c) = l.forward(x)?;
                (y, Cache::ConvT(c))
            }
            Layer::Linear(l) => (l.forward(x)?, Cache::Linear(x.clone())),
            Layer::BatchNorm(l) => {
                let (y, c) = l.forward_train(x)?;
                (y, Cache::BatchNorm(c))
            }
            Layer::Tanh => {
                let y = x.map(|v| v.tanh());
                (y.clone(), Cache::Tanh(y))
            }
            Layer::Reshape(s) => (reshape_items(x, s)?, Cache::Reshape(x.shape().to_vec())),
        })
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => Ok(l.forward(x)?.0),
            Layer::ConvT(l) => Ok(l.forward(x)?.0),
            Layer::Linear(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward_infer(x),
            Layer::Tanh => Ok(x.map(|v| v.tanh())),
            Layer::Reshape(s) => reshape_items(x, s),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &Cache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match (self, cache) {
            (Layer::Conv(l), Cache::Conv(c)) => l.backward(c, dy),
            (Layer::ConvT(l), Cache::ConvT(c)) => l.backward(c, dy),
            (Layer::Linear(l), Cache::Linear(x)) => l.backward(x, dy),
            (Layer::BatchNorm(l), Cache::BatchNorm(c)) => l.backward(c, dy),
            (Layer::Tanh, Cache::Tanh(y)) => {
                let mut dx = dy.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                    *d *= T::one() - v * v;
                }
                Ok(dx)
            }
            (Layer::Reshape(_), Cache::Reshape(s)) => dy.clone().reshape(s),
            _ => Err(Error::InvalidArgument("cache does not belong to this layer".into())),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) => std::iter::once(&l.weight).chain(l.bias.as_ref()).collect(),
            Layer::ConvT(l) => std::iter::once(&l.weight).chain(l.bias.as_ref()).collect(),
            Layer::Linear(l) => std::iter::once(&l.weight).chain(l.bias.as_ref()).collect(),
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Tanh | Layer::Reshape(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
            Layer::ConvT(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
            Layer::Linear(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Tanh | Layer::Reshape(_) => vec![],
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(l) => LayerSpec {
                kind: LayerKind::Conv2d,
                filter: l.geom.kernel,
                stride: l.geom.stride,
                units: l.weight.value.dim(0),
            },
            Layer::ConvT(l) => LayerSpec {
                kind: LayerKind::TransposedConv2d,
                filter: l.geom.kernel,
                stride: l.geom.stride,
                units: l.weight.value.dim(1),
            },
            Layer::Linear(l) => LayerSpec {
                kind: LayerKind::FullyConnected,
                filter: (1, 1),
                stride: (1, 1),
                units: l.outputs(),
            },
            Layer::BatchNorm(l) => LayerSpec {
                kind: LayerKind::BatchNorm,
                filter: (1, 1),
                stride: (1, 1),
                units: l.channels(),
            },
            Layer::Tanh => LayerSpec { kind: LayerKind::Tanh, filter: (1, 1), stride: (1, 1), units: 0 },
            Layer::Reshape(s) => LayerSpec {
                kind: LayerKind::Reshape,
                filter: (1, 1),
                stride: (1, 1),
                units: s.iter().product(),
            },
        }
    }
}

/// Anything that owns learnable parameters in a fixed order.
pub trait Parameterized<T> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self)
    where
        T: Scalar,
    {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn param_count(&self) -> usize
    where
        T: Scalar,
    {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Named layers applied in order.
#[derive(Clone, Debug)]
pub struct Sequential<T> {
    pub layers: Vec<(String, Layer<T>)>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer<T>) {
        self.layers.push((name.into(), layer));
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (name, layer) in &mut self.layers {
            let (y, c) = layer.forward_train(&h)?;
            if !y.is_finite() {
                return Err(Error::non_finite(format!("forward of layer {name}")));
            }
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (_, layer) in &self.layers {
            h = layer.forward_infer(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Option<Vec<Cache<T>>>)> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(y, c)| (y, Some(c))),
            Mode::Infer => self.forward_infer(x).map(|y| (y, None)),
        }
    }

    pub fn backward(&mut self, caches: &[Cache<T>], dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        for ((name, layer), cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(cache, &g)?;
            if !g.is_finite() || layer.params().iter().any(|p| !p.grad.is_finite()) {
                return Err(Error::non_finite(format!("gradient of layer {name}")));
            }
        }
        Ok(g)
    }

    pub fn batchnorms(&self) -> impl Iterator<Item = (&str, &BatchNorm<T>)> {
        self.layers.iter().filter_map(|(n, l)| match l {
            Layer::BatchNorm(bn) => Some((n.as_str(), bn)),
            _ => None,
        })
    }

    pub fn batchnorms_mut(&mut self) -> impl Iterator<Item = (&str, &mut BatchNorm<T>)> {
        self.layers.iter_mut().filter_map(|(n, l)| match l {
            Layer::BatchNorm(bn) => Some((n.as_str(), bn)),
            _ => None,
        })
    }

    pub fn specs(&self) -> Vec<(String, LayerSpec)> {
        self.layers.iter().map(|(n, l)| (n.clone(), l.spec())).collect()
    }
}

impl<T: Scalar> Default for Sequential<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Parameterized<T> for Sequential<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|(_, l)| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|(_, l)| l.params_mut()).collect()
    }
}
