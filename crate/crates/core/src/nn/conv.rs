//! 2-D convolution and its transpose over `(batch, channel, time, freq)`.
//!
//! Both are lowered to a single GEMM per call through an im2col buffer laid
//! out as `(C·kh·kw, B·P)` where `P` is the number of output positions.

use super::{Param, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeom {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel {kernel:?} and stride {stride:?} must be positive"
            )));
        }
        Ok(Self { kernel, stride, padding })
    }

    /// Output spatial size of the forward convolution on an `h×w` input.
    pub fn out_len(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let f = |n: usize, k: usize, s: usize, p: usize| {
            (n + 2 * p >= k).then(|| (n + 2 * p - k) / s + 1)
        };
        match (
            f(h, self.kernel.0, self.stride.0, self.padding.0),
            f(w, self.kernel.1, self.stride.1, self.padding.1),
        ) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Shape(format!("input {h}x{w} smaller than kernel {:?}", self.kernel))),
        }
    }

    fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], b: usize, c: usize, h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize) -> Vec<T> {
    let p = ho * wo;
    let ncol = b * p;
    let (kh, kw) = g.kernel;
    let mut cols = vec![T::zero(); c * kh * kw * ncol];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for bi in 0..b {
                    let src = &x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * g.stride.0 + ki) as isize - g.padding.0 as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let srow = &src[ih as usize * w..(ih as usize + 1) * w];
                        let drow = &mut dst[bi * p + oh * wo..bi * p + (oh + 1) * wo];
                        for (ow, d) in drow.iter_mut().enumerate() {
                            let iw = (ow * g.stride.1 + kj) as isize - g.padding.1 as isize;
                            if iw >= 0 && iw < w as isize {
                                *d = srow[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], b: usize, c: usize, h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize) -> Vec<T> {
    let p = ho * wo;
    let ncol = b * p;
    let (kh, kw) = g.kernel;
    let mut x = vec![T::zero(); b * c * h * w];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for bi in 0..b {
                    let dst = &mut x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * g.stride.0 + ki) as isize - g.padding.0 as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for ow in 0..wo {
                            let iw = (ow * g.stride.1 + kj) as isize - g.padding.1 as isize;
                            if iw >= 0 && iw < w as isize {
                                dst[ih as usize * w + iw as usize] += src[bi * p + oh * wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(B, C, P)` → `(C, B·P)`.
fn to_channel_major<T: Scalar>(x: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[ci * b * p + bi * p..ci * b * p + (bi + 1) * p]
                .copy_from_slice(&x[(bi * c + ci) * p..(bi * c + ci + 1) * p]);
        }
    }
    out
}

/// `(C, B·P)` → `(B, C, P)`.
fn from_channel_major<T: Scalar>(x: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[(bi * c + ci) * p..(bi * c + ci + 1) * p]
                .copy_from_slice(&x[ci * b * p + bi * p..ci * b * p + (bi + 1) * p]);
        }
    }
    out
}

fn dims4<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        ref s => Err(Error::Shape(format!("{what}: expected 4-d tensor, got {s:?}"))),
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, n: usize) -> Result<()> {
    if let Some(bv) = bias {
        bv.expect_shape(&[n], "bias")?;
    }
    Ok(())
}

/// Intermediate kept by [`conv2d_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: Vec<usize>,
}

/// Cross-correlation of `x (B,C,H,W)` with `w (O,C,kh,kw)`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let (b, c, h, wd) = dims4(x, "conv input")?;
    let (o, wc, kh, kw) = dims4(w, "conv weight")?;
    if wc != c || (kh, kw) != g.kernel {
        return Err(Error::Shape(format!(
            "conv weight {:?} does not fit input channels {c} / kernel {:?}",
            w.shape(),
            g.kernel
        )));
    }
    check_bias(bias, o)?;
    let (ho, wo) = g.out_len(h, wd)?;
    let p = ho * wo;
    let ck = c * g.taps();
    let cols = im2col(x.data(), b, c, h, wd, g, ho, wo);
    let mut out = vec![T::zero(); o * b * p];
    T::gemm(o, ck, b * p, w.data(), false, &cols, false, T::zero(), &mut out);
    let mut y = from_channel_major(&out, b, o, p);
    if let Some(bv) = bias {
        for (chunk, oi) in y.chunks_mut(p).zip((0..o).cycle()) {
            let bb = bv.data()[oi];
            chunk.iter_mut().for_each(|v| *v += bb);
        }
    }
    Ok((Tensor::from_vec(&[b, o, ho, wo], y)?, ConvCache { cols, in_shape: x.shape().to_vec() }))
}

/// Gradients `(dx, dw, db)` of [`conv2d_forward`].
pub fn conv2d_backward<T: Scalar>(
    dy: &Tensor<T>,
    cache: &ConvCache<T>,
    w: &Tensor<T>,
    g: &ConvGeom,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, c, h, wd) = (cache.in_shape[0], cache.in_shape[1], cache.in_shape[2], cache.in_shape[3]);
    let o = w.dim(0);
    let (ho, wo) = g.out_len(h, wd)?;
    dy.expect_shape(&[b, o, ho, wo], "conv output gradient")?;
    let p = ho * wo;
    let ck = c * g.taps();
    let dyc = to_channel_major(dy.data(), b, o, p);
    let mut dw = vec![T::zero(); o * ck];
    T::gemm(o, b * p, ck, &dyc, false, &cache.cols, true, T::zero(), &mut dw);
    let db: Vec<T> = dyc.chunks(b * p).map(|r| r.iter().copied().sum()).collect();
    let mut dcols = vec![T::zero(); ck * b * p];
    T::gemm(ck, o, b * p, w.data(), true, &dyc, false, T::zero(), &mut dcols);
    let dx = col2im(&dcols, b, c, h, wd, g, ho, wo);
    Ok((
        Tensor::from_vec(&cache.in_shape, dx)?,
        Tensor::from_vec(w.shape(), dw)?,
        Tensor::from_vec(&[o], db)?,
    ))
}

#[derive(Clone, Debug)]
pub struct ConvTCache<T> {
    zc: Vec<T>,
    in_shape: Vec<usize>,
}

/// Transposed convolution: the adjoint of [`conv2d_forward`] with the same
/// `w` and geometry, producing an `out_hw` output. `out_hw` must be a size
/// that the forward convolution maps back onto the input size; any extra
/// rows from striding are cropped.
pub fn conv_transpose2d_forward<T: Scalar>(
    z: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
    out_hw: (usize, usize),
) -> Result<(Tensor<T>, ConvTCache<T>)> {
    let (b, ci, hi, wi) = dims4(z, "transposed conv input")?;
    let (wci, co, kh, kw) = dims4(w, "transposed conv weight")?;
    if wci != ci || (kh, kw) != g.kernel {
        return Err(Error::Shape(format!(
            "transposed conv weight {:?} does not fit input channels {ci} / kernel {:?}",
            w.shape(),
            g.kernel
        )));
    }
    check_bias(bias, co)?;
    let (ho, wo) = out_hw;
    if g.out_len(ho, wo)? != (hi, wi) {
        return Err(Error::Shape(format!(
            "output {ho}x{wo} is not the preimage of input {hi}x{wi} under {g:?}"
        )));
    }
    let pi = hi * wi;
    let cok = co * g.taps();
    let zc = to_channel_major(z.data(), b, ci, pi);
    let mut cols = vec![T::zero(); cok * b * pi];
    T::gemm(cok, ci, b * pi, w.data(), true, &zc, false, T::zero(), &mut cols);
    let mut y = col2im(&cols, b, co, ho, wo, g, hi, wi);
    if let Some(bv) = bias {
        for (chunk, oi) in y.chunks_mut(ho * wo).zip((0..co).cycle()) {
            let bb = bv.data()[oi];
            chunk.iter_mut().for_each(|v| *v += bb);
        }
    }
    Ok((Tensor::from_vec(&[b, co, ho, wo], y)?, ConvTCache { zc, in_shape: z.shape().to_vec() }))
}

/// Gradients `(dz, dw, db)` of [`conv_transpose2d_forward`].
pub fn conv_transpose2d_backward<T: Scalar>(
    dy: &Tensor<T>,
    cache: &ConvTCache<T>,
    w: &Tensor<T>,
    g: &ConvGeom,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, ci, hi, wi) = (cache.in_shape[0], cache.in_shape[1], cache.in_shape[2], cache.in_shape[3]);
    let (_, co, ho, wo) = dims4(dy, "transposed conv output gradient")?;
    if dy.dim(0) != b || co != w.dim(1) {
        return Err(Error::Shape(format!("gradient {:?} does not match layer", dy.shape())));
    }
    let pi = hi * wi;
    let cok = co * g.taps();
    let dcols = im2col(dy.data(), b, co, ho, wo, g, hi, wi);
    let mut dzc = vec![T::zero(); ci * b * pi];
    T::gemm(ci, cok, b * pi, w.data(), false, &dcols, false, T::zero(), &mut dzc);
    let mut dw = vec![T::zero(); ci * cok];
    T::gemm(ci, b * pi, cok, &cache.zc, false, &dcols, true, T::zero(), &mut dw);
    let mut db = vec![T::zero(); co];
    for (chunk, oi) in dy.data().chunks(ho * wo).zip((0..co).cycle()) {
        db[oi] += chunk.iter().copied().sum();
    }
    Ok((
        Tensor::from_vec(&cache.in_shape, from_channel_major(&dzc, b, ci, pi))?,
        Tensor::from_vec(w.shape(), dw)?,
        Tensor::from_vec(&[co], db)?,
    ))
}

/// Convolution layer with weight `(out, in, kh, kw)`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub geom: ConvGeom,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, geom: ConvGeom, bias: bool, rng: &mut Rng) -> Self {
        let k = geom.taps();
        let (kh, kw) = geom.kernel;
        Self {
            weight: Param::glorot(format!("{name}.weight"), &[out_ch, in_ch, kh, kw], in_ch * k, out_ch * k, rng),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[out_ch]))),
            geom,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        conv2d_forward(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value), &self.geom)
    }

    pub fn backward(&mut self, cache: &ConvCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (dx, dw, db) = conv2d_backward(dy, cache, &self.weight.value, &self.geom)?;
        self.weight.grad.add_assign(&dw);
        if let Some(b) = &mut self.bias {
            b.grad.add_assign(&db);
        }
        Ok(dx)
    }
}

/// Transposed convolution layer with weight `(in, out, kh, kw)` and a fixed
/// output size.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub geom: ConvGeom,
    pub out_hw: (usize, usize),
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        geom: ConvGeom,
        out_hw: (usize, usize),
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let k = geom.taps();
        let (kh, kw) = geom.kernel;
        Self {
            weight: Param::glorot(format!("{name}.weight"), &[in_ch, out_ch, kh, kw], in_ch * k, out_ch * k, rng),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[out_ch]))),
            geom,
            out_hw,
        }
    }

    pub fn forward(&self, z: &Tensor<T>) -> Result<(Tensor<T>, ConvTCache<T>)> {
        conv_transpose2d_forward(z, &self.weight.value, self.bias.as_ref().map(|b| &b.value), &self.geom, self.out_hw)
    }

    pub fn backward(&mut self, cache: &ConvTCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (dz, dw, db) = conv_transpose2d_backward(dy, cache, &self.weight.value, &self.geom)?;
        self.weight.grad.add_assign(&dw);
        if let Some(b) = &mut self.bias {
            b.grad.add_assign(&db);
        }
        Ok(dz)
    }
}
