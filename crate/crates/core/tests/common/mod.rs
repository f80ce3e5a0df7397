//! Independent reference implementations shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use speech_vae::nn::{ConvGeom, Tensor};
use speech_vae::rng::Rng;

/// Direct nested-loop cross-correlation, `x (B,C,H,W)`, `w (O,C,kh,kw)`.
pub fn conv_loops(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&[f64]>, g: &ConvGeom) -> Tensor<f64> {
    let [b, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, kh, kw] = w.shape().try_into().unwrap();
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let ho = (h + 2 * ph - kh) / sh + 1;
    let wo = (wd + 2 * pw - kw) / sw + 1;
    let mut y = Tensor::zeros(&[b, o, ho, wo]);
    for bi in 0..b {
        for oi in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = bias.map_or(0.0, |bv| bv[oi]);
                    for ci in 0..c {
                        for a in 0..kh {
                            for e in 0..kw {
                                let r = (i * sh + a) as isize - ph as isize;
                                let s = (j * sw + e) as isize - pw as isize;
                                if r < 0 || s < 0 || r >= h as isize || s >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * c + ci) * h + r as usize) * wd + s as usize]
                                    * w.data()[((oi * c + ci) * kh + a) * kw + e];
                            }
                        }
                    }
                    y.data_mut()[((bi * o + oi) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    y
}

/// Direct scatter form of the transposed convolution, `z (B,Ci,Hi,Wi)`,
/// `w (Ci,Co,kh,kw)`: every input value spreads the kernel onto the output,
/// positions falling outside `out_hw` are dropped.
pub fn conv_transpose_loops(
    z: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&[f64]>,
    g: &ConvGeom,
    out_hw: (usize, usize),
) -> Tensor<f64> {
    let [b, ci, hi, wi] = z.shape().try_into().unwrap();
    let [_, co, kh, kw] = w.shape().try_into().unwrap();
    let (ho, wo) = out_hw;
    let mut y = Tensor::zeros(&[b, co, ho, wo]);
    for bi in 0..b {
        for oc in 0..co {
            let bb = bias.map_or(0.0, |bv| bv[oc]);
            for k in 0..ho * wo {
                y.data_mut()[(bi * co + oc) * ho * wo + k] = bb;
            }
        }
        for c in 0..ci {
            for i in 0..hi {
                for j in 0..wi {
                    let v = z.data()[((bi * ci + c) * hi + i) * wi + j];
                    for oc in 0..co {
                        for a in 0..kh {
                            for e in 0..kw {
                                let r = (i * g.stride.0 + a) as isize - g.padding.0 as isize;
                                let s = (j * g.stride.1 + e) as isize - g.padding.1 as isize;
                                if r < 0 || s < 0 || r >= ho as isize || s >= wo as isize {
                                    continue;
                                }
                                y.data_mut()[((bi * co + oc) * ho + r as usize) * wo + s as usize] +=
                                    v * w.data()[((c * co + oc) * kh + a) * kw + e];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Largest `|a − b| / max(|b|, 1e-12)` in units of the largest reference
/// magnitude, i.e. `max|a − b| / max|b|`.
pub fn max_rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.data().iter().zip(b.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// A random convolution geometry plus an input size it applies to.
pub struct RandomConv {
    pub geom: ConvGeom,
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_hw: (usize, usize),
}

impl RandomConv {
    pub fn draw(rng: &mut Rng) -> Self {
        let kernel = (1 + rng.below(4), 1 + rng.below(4));
        let stride = (1 + rng.below(3), 1 + rng.below(3));
        let padding = (rng.below(kernel.0), rng.below(kernel.1));
        let in_hw = (kernel.0 + rng.below(9), kernel.1 + rng.below(9));
        Self {
            geom: ConvGeom::new(kernel, stride, padding).unwrap(),
            batch: 1 + rng.below(3),
            in_ch: 1 + rng.below(4),
            out_ch: 1 + rng.below(4),
            in_hw,
        }
    }
}

/// Monte Carlo estimate of `KL(q ‖ N(0, I))` as the mean of
/// `log q(z) − log p(z)` over `n` draws from `q`.
/// Monte Carlo KL to the standard normal with its standard error.
pub fn kl_monte_carlo(mean: &[f64], log_var: &[f64], n: usize, rng: &mut Rng) -> (f64, f64) {
    let (mut acc, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut lr = 0.0;
        for (&m, &lv) in mean.iter().zip(log_var) {
            let e = rng.normal();
            let z = m + (0.5 * lv).exp() * e;
            // log q − log p per dim; the log 2π terms cancel.
            lr += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
        }
        acc += lr;
        sq += lr * lr;
    }
    let mean = acc / n as f64;
    (mean, ((sq / n as f64 - mean * mean).max(0.0) / n as f64).sqrt())
}

/// Labeled toy segments: each speaker adds a constant tilt over frequency,
/// each phone a bump at its own bin, plus white noise. Utterance ids are
/// `spkS_uU`, every utterance contributes one segment per phone.
pub fn toy_segments(
    n_speakers: usize,
    n_phones: usize,
    utts: usize,
    seg_len: usize,
    n_bins: usize,
    seed: u64,
) -> Vec<speech_vae::dsp::FeatureSegment> {
    use speech_vae::dsp::{FeatureKind, FeatureSegment};
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    for s in 0..n_speakers {
        for u in 0..utts {
            for p in 0..n_phones {
                let bump = p * n_bins / n_phones;
                let values = (0..seg_len * n_bins)
                    .map(|i| {
                        let f = i % n_bins;
                        let tilt = 10.0 * s as f64 * f as f64 / n_bins as f64;
                        let peak = if f == bump { 25.0 } else { 0.0 };
                        (20.0 + tilt + peak + 2.0 * rng.normal()) as f32
                    })
                    .collect();
                let labels = [("speaker", format!("spk{s:02}")), ("phone", format!("ph{p}"))]
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v))
                    .collect();
                out.push(FeatureSegment {
                    values,
                    n_frames: seg_len,
                    n_bins,
                    kind: FeatureKind::FBank,
                    labels,
                    utt: format!("spk{s:02}_u{u:02}"),
                    start: p * seg_len,
                });
            }
        }
    }
    out
}

/// Small architecture for fast tests.
pub fn small_arch(seg_len: usize, n_bins: usize, latent: usize) -> speech_vae::vae::Arch {
    speech_vae::vae::Arch {
        seg_len,
        n_bins,
        feature_kind: speech_vae::dsp::FeatureKind::FBank,
        conv: [4, 8, 8],
        fc: 16,
        latent,
    }
}
