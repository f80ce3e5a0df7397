use super::loss::{gaussian_log_likelihood, kl_to_standard_normal, reparameterize, squared_error};
use crate::dsp::FeatureKind;
use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm, ConvGeom, Conv2d, ConvTranspose2d, Layer, Linear, Param, Parameterized, Scalar, Sequential,
    Tensor,
};
use crate::rng::Rng;

/// Layer widths and segment geometry of one model. `(feature_kind, T)` is
/// fixed per model.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Arch {
    pub seg_len: usize,
    pub n_bins: usize,
    pub feature_kind: FeatureKind,
    /// Filters of the three convolutional layers.
    pub conv: [usize; 3],
    pub fc: usize,
    pub latent: usize,
}

impl Arch {
    /// Recognition widths 64/128/256 conv, 512 fc, 128-d latent.
    pub fn standard(seg_len: usize, feature_kind: FeatureKind) -> Self {
        Self { seg_len, n_bins: feature_kind.bins(), feature_kind, conv: [64, 128, 256], fc: 512, latent: 128 }
    }

    /// Time length after the first strided layer.
    pub fn t2(&self) -> usize {
        self.seg_len.div_ceil(2)
    }

    /// Time length after the second strided layer.
    pub fn t3(&self) -> usize {
        self.t2().div_ceil(2)
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, 1, self.seg_len, self.n_bins]
    }

    fn validate(&self) -> Result<()> {
        if self.seg_len == 0 || self.n_bins == 0 || self.fc == 0 || self.latent == 0 || self.conv.contains(&0) {
            return Err(Error::InvalidArgument(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vae,
    /// Autoencoder baseline: the Gaussian layer is a plain 128-unit code and
    /// the loss is squared error on the decoder mean.
    Ae,
}

/// Mean and log-variance of a diagonal Gaussian, batch-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams<T> {
    pub mean: Tensor<T>,
    pub log_var: Tensor<T>,
}

impl<T: Scalar> GaussianParams<T> {
    pub fn batch(&self) -> usize {
        self.mean.dim(0)
    }

    pub fn kl_per_item(&self) -> Vec<f64> {
        (0..self.batch()).map(|i| kl_to_standard_normal(self.mean.item(i), self.log_var.item(i))).collect()
    }

    pub fn log_likelihood_per_item(&self, x: &Tensor<T>) -> Vec<f64> {
        (0..self.batch())
            .map(|i| gaussian_log_likelihood(x.item(i), self.mean.item(i), self.log_var.item(i)))
            .collect()
    }

    pub fn sample(&self, eps: &Tensor<T>) -> Result<Tensor<T>> {
        eps.expect_shape(self.mean.shape(), "reparameterization noise")?;
        Tensor::from_vec(self.mean.shape(), reparameterize(self.mean.data(), self.log_var.data(), eps.data()))
    }
}

/// Per-item terms of the lower bound (nats per segment).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboParts {
    pub elbo: f64,
    pub kl: f64,
    pub recon: f64,
}

/// Batch-mean training loss and its parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    /// Minimized quantity: mean negative lower bound (or mean squared error).
    pub loss: f64,
    pub kl: f64,
    pub recon: f64,
}

/// The convolutional VAE (or its AE baseline).
///
/// Recognition: `1×F` conv (valid along frequency) → two `3×1` stride-2
/// convs (zero padded along time) → fc → Gaussian heads. Every layer but
/// the heads is batch-normalized then tanh-activated. Generation mirrors it
/// with transposed convolutions and ends in two `1×F` transposed heads for
/// the mean and log-variance of `x`.
#[derive(Clone, Debug)]
pub struct SpeechModel<T> {
    pub arch: Arch,
    pub kind: ModelKind,
    pub encoder: Sequential<T>,
    pub enc_mean: Linear<T>,
    pub enc_log_var: Option<Linear<T>>,
    pub decoder: Sequential<T>,
    pub dec_mean: ConvTranspose2d<T>,
    pub dec_log_var: ConvTranspose2d<T>,
    /// Range `log σ_x²` is clamped to before use; `None` disables clamping.
    pub log_var_clamp: Option<(f64, f64)>,
}

fn block<T: Scalar>(seq: &mut Sequential<T>, name: &str, layer: Layer<T>, width: usize) {
    seq.push(name, layer);
    seq.push(format!("{name}.bn"), Layer::BatchNorm(BatchNorm::new(&format!("{name}.bn"), width)));
    seq.push(format!("{name}.tanh"), Layer::Tanh);
}

/// The convolutional and fully-connected layers of the recognition network,
/// up to (not including) the Gaussian heads. Output `(B, fc)`.
pub fn recognition_trunk<T: Scalar>(arch: &Arch, rng: &mut Rng) -> Result<Sequential<T>> {
    arch.validate()?;
    let [c1, c2, c3] = arch.conv;
    let full = ConvGeom::new((1, arch.n_bins), (1, 1), (0, 0))?;
    let halve = ConvGeom::new((3, 1), (2, 1), (1, 0))?;
    let mut encoder = Sequential::new();
    block(&mut encoder, "enc.conv1", Layer::Conv(Conv2d::new("enc.conv1", 1, c1, full, false, rng)), c1);
    block(&mut encoder, "enc.conv2", Layer::Conv(Conv2d::new("enc.conv2", c1, c2, halve, false, rng)), c2);
    block(&mut encoder, "enc.conv3", Layer::Conv(Conv2d::new("enc.conv3", c2, c3, halve, false, rng)), c3);
    encoder.push("enc.flatten", Layer::Reshape(vec![c3 * arch.t3()]));
    let fc = Layer::Linear(Linear::new("enc.fc1", c3 * arch.t3(), arch.fc, false, rng));
    block(&mut encoder, "enc.fc1", fc, arch.fc);
    Ok(encoder)
}

impl<T: Scalar> SpeechModel<T> {
    pub fn new(arch: Arch, kind: ModelKind, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let [c1, c2, c3] = arch.conv;
        let (t, t2, t3, f) = (arch.seg_len, arch.t2(), arch.t3(), arch.n_bins);
        let full = ConvGeom::new((1, f), (1, 1), (0, 0))?;
        let halve = ConvGeom::new((3, 1), (2, 1), (1, 0))?;

        let encoder = recognition_trunk(&arch, rng)?;
        let enc_mean = Linear::new("enc.gauss.mean", arch.fc, arch.latent, true, rng);
        let enc_log_var =
            (kind == ModelKind::Vae).then(|| Linear::new("enc.gauss.log_var", arch.fc, arch.latent, true, rng));

        let mut decoder = Sequential::new();
        block(&mut decoder, "dec.fc1", Layer::Linear(Linear::new("dec.fc1", arch.latent, arch.fc, false, rng)), arch.fc);
        block(&mut decoder, "dec.fc2", Layer::Linear(Linear::new("dec.fc2", arch.fc, c3 * t3, false, rng)), c3 * t3);
        decoder.push("dec.unflatten", Layer::Reshape(vec![c3, t3, 1]));
        block(
            &mut decoder,
            "dec.tconv3",
            Layer::ConvT(ConvTranspose2d::new("dec.tconv3", c3, c2, halve, (t2, 1), false, rng)),
            c2,
        );
        block(
            &mut decoder,
            "dec.tconv2",
            Layer::ConvT(ConvTranspose2d::new("dec.tconv2", c2, c1, halve, (t, 1), false, rng)),
            c1,
        );
        let dec_mean = ConvTranspose2d::new("dec.gauss.mean", c1, 1, full, (t, f), true, rng);
        let dec_log_var = ConvTranspose2d::new("dec.gauss.log_var", c1, 1, full, (t, f), true, rng);
        Ok(Self { arch, kind, encoder, enc_mean, enc_log_var, decoder, dec_mean, dec_log_var, log_var_clamp: Some((-7.0, 7.0)) })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let b = x.shape().first().copied().unwrap_or(0);
        x.expect_shape(&self.arch.input_shape(b), "model input")
    }

    fn check_latent(&self, z: &Tensor<T>) -> Result<()> {
        match *z.shape() {
            [_, d] if d == self.arch.latent => Ok(()),
            ref s => Err(Error::Shape(format!("latent batch must be (B, {}), got {s:?}", self.arch.latent))),
        }
    }

    fn clamp(&self, lv: Tensor<T>) -> Tensor<T> {
        match self.log_var_clamp {
            Some((lo, hi)) => {
                let (lo, hi) = (T::lit(lo), T::lit(hi));
                lv.map(|v| v.max(lo).min(hi))
            }
            None => lv,
        }
    }

    /// Posterior over `z` (infer mode). The AE returns its code as the mean
    /// with zero log-variance.
    pub fn encode(&self, x: &Tensor<T>) -> Result<GaussianParams<T>> {
        self.check_input(x)?;
        let h = self.encoder.forward_infer(x)?;
        let mean = self.enc_mean.forward(&h)?;
        let log_var = match &self.enc_log_var {
            Some(l) => l.forward(&h)?,
            None => Tensor::zeros(mean.shape()),
        };
        Ok(GaussianParams { mean, log_var })
    }

    /// Likelihood parameters of `x` given `z` (infer mode), each `(B,1,T,F)`.
    pub fn decode(&self, z: &Tensor<T>) -> Result<GaussianParams<T>> {
        self.check_latent(z)?;
        let h = self.decoder.forward_infer(z)?;
        let mean = self.dec_mean.forward(&h)?.0;
        let log_var = self.clamp(self.dec_log_var.forward(&h)?.0);
        Ok(GaussianParams { mean, log_var })
    }

    /// Lower-bound terms per item in infer mode. The reconstruction term is
    /// averaged over the given noise draws (one `(B, latent)` tensor each).
    pub fn elbo(&self, x: &Tensor<T>, eps: &[Tensor<T>]) -> Result<Vec<ElboParts>> {
        if eps.is_empty() {
            return Err(Error::InvalidArgument("need at least one latent sample".into()));
        }
        let q = self.encode(x)?;
        let kl = q.kl_per_item();
        let mut recon = vec![0.0; q.batch()];
        for e in eps {
            let px = self.decode(&q.sample(e)?)?;
            for (r, v) in recon.iter_mut().zip(px.log_likelihood_per_item(x)) {
                *r += v / eps.len() as f64;
            }
        }
        Ok(kl.into_iter().zip(recon).map(|(kl, recon)| ElboParts { elbo: recon - kl, kl, recon }).collect())
    }

    /// Train-mode forward pass of the batch loss; with `backward` set, also
    /// accumulates gradients into every parameter. `eps` is the frozen
    /// reparameterization noise `(B, latent)` (ignored by the AE).
    pub fn train_loss(&mut self, x: &Tensor<T>, eps: &Tensor<T>, backward: bool) -> Result<LossReport> {
        self.run_train(x, eps, backward, None)
    }

    /// The train-mode loss split into its per-element summands (each
    /// already divided by the batch size). Finite-difference checks
    /// difference these term by term.
    pub fn loss_terms(&mut self, x: &Tensor<T>, eps: &Tensor<T>) -> Result<Vec<f64>> {
        let mut terms = Vec::new();
        self.run_train(x, eps, false, Some(&mut terms))?;
        Ok(terms)
    }

    fn run_train(
        &mut self,
        x: &Tensor<T>,
        eps: &Tensor<T>,
        backward: bool,
        terms: Option<&mut Vec<f64>>,
    ) -> Result<LossReport> {
        self.check_input(x)?;
        let b = x.dim(0);
        let inv_b = T::lit(1.0 / b as f64);
        let half = T::lit(0.5);

        let (h, enc_caches) = self.encoder.forward_train(x)?;
        let mean = self.enc_mean.forward(&h)?;
        let (z, log_var) = match &self.enc_log_var {
            Some(l) => {
                let lv = l.forward(&h)?;
                eps.expect_shape(mean.shape(), "reparameterization noise")?;
                let z = Tensor::from_vec(mean.shape(), reparameterize(mean.data(), lv.data(), eps.data()))?;
                (z, Some(lv))
            }
            None => (mean.clone(), None),
        };
        let (hd, dec_caches) = self.decoder.forward_train(&z)?;
        let (mux, mu_cache) = self.dec_mean.forward(&hd)?;
        let (lvx_raw, lv_cache) = self.dec_log_var.forward(&hd)?;
        let lvx = self.clamp(lvx_raw.clone());

        let report = match &log_var {
            Some(lv) => {
                let q = GaussianParams { mean: mean.clone(), log_var: lv.clone() };
                let px = GaussianParams { mean: mux.clone(), log_var: lvx.clone() };
                let kl: f64 = q.kl_per_item().iter().sum::<f64>() / b as f64;
                let recon: f64 = px.log_likelihood_per_item(x).iter().sum::<f64>() / b as f64;
                LossReport { loss: kl - recon, kl, recon }
            }
            None => {
                let se: f64 = (0..b).map(|i| squared_error(x.item(i), mux.item(i))).sum::<f64>() / b as f64;
                LossReport { loss: se, kl: 0.0, recon: -se }
            }
        };
        if !report.loss.is_finite() {
            return Err(Error::non_finite("training loss"));
        }
        if let Some(terms) = terms {
            let bf = b as f64;
            terms.clear();
            if let Some(lv) = &log_var {
                for k in 0..mean.len() {
                    terms.push(kl_to_standard_normal(&mean.data()[k..=k], &lv.data()[k..=k]) / bf);
                }
            }
            for k in 0..x.len() {
                let (xs, ms) = (&x.data()[k..=k], &mux.data()[k..=k]);
                terms.push(match log_var {
                    Some(_) => -gaussian_log_likelihood(xs, ms, &lvx.data()[k..=k]) / bf,
                    None => squared_error(xs, ms) / bf,
                });
            }
        }
        if !backward {
            return Ok(report);
        }

        // Output heads.
        let mut dmux = Tensor::zeros(mux.shape());
        let mut dlvx = Tensor::zeros(mux.shape());
        let (lo, hi) = self.log_var_clamp.map_or((T::neg_infinity(), T::infinity()), |(l, h)| (T::lit(l), T::lit(h)));
        for k in 0..x.len() {
            let d = x.data()[k] - mux.data()[k];
            match log_var {
                Some(_) => {
                    let prec = (-lvx.data()[k]).exp();
                    dmux.data_mut()[k] = -d * prec * inv_b;
                    let raw = lvx_raw.data()[k];
                    if raw > lo && raw < hi {
                        dlvx.data_mut()[k] = (half - half * d * d * prec) * inv_b;
                    }
                }
                None => dmux.data_mut()[k] = T::lit(-2.0) * d * inv_b,
            }
        }
        let mut dhd = self.dec_mean.backward(&mu_cache, &dmux)?;
        dhd.add_assign(&self.dec_log_var.backward(&lv_cache, &dlvx)?);
        let dz = self.decoder.backward(&dec_caches, &dhd)?;

        // Reparameterization and KL.
        let mut dh = match (&log_var, &mut self.enc_log_var) {
            (Some(lv), Some(lv_layer)) => {
                let mut dmean = dz.clone();
                let mut dlv = Tensor::zeros(lv.shape());
                for k in 0..dz.len() {
                    let (m, l, e) = (mean.data()[k], lv.data()[k], eps.data()[k]);
                    dmean.data_mut()[k] += m * inv_b;
                    dlv.data_mut()[k] = dz.data()[k] * e * half * (half * l).exp() + half * (l.exp() - T::one()) * inv_b;
                }
                let mut dh = self.enc_mean.backward(&h, &dmean)?;
                dh.add_assign(&lv_layer.backward(&h, &dlv)?);
                dh
            }
            _ => self.enc_mean.backward(&h, &dz)?,
        };
        if !dh.is_finite() {
            return Err(Error::non_finite("gradient of layer enc.gauss"));
        }
        dh = self.encoder.backward(&enc_caches, &dh)?;
        debug_assert_eq!(dh.shape(), x.shape());
        Ok(report)
    }

    /// Latent noise of the right shape for a batch, drawn from `rng`.
    pub fn draw_eps(&self, batch: usize, rng: &mut Rng) -> Tensor<T> {
        Tensor::from_fn(&[batch, self.arch.latent], |_| T::lit(rng.normal()))
    }

    pub fn batchnorms(&self) -> Vec<(&str, &BatchNorm<T>)> {
        self.encoder.batchnorms().chain(self.decoder.batchnorms()).collect()
    }

    pub fn batchnorms_mut(&mut self) -> Vec<(&str, &mut BatchNorm<T>)> {
        self.encoder.batchnorms_mut().chain(self.decoder.batchnorms_mut()).collect()
    }

    /// Convert precision (e.g. a trained f32 model to f64 for oracles).
    pub fn cast<U: Scalar>(&self) -> SpeechModel<U> {
        let mut rng = Rng::new(0);
        let mut out = SpeechModel::<U>::new(self.arch.clone(), self.kind, &mut rng).expect("valid architecture");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.cast();
        }
        for ((_, dst), (_, src)) in out.batchnorms_mut().into_iter().zip(self.batchnorms()) {
            dst.running_mean = src.running_mean.iter().map(|v| U::lit(v.f64())).collect();
            dst.running_var = src.running_var.iter().map(|v| U::lit(v.f64())).collect();
        }
        out.log_var_clamp = self.log_var_clamp;
        out
    }
}

impl<T: Scalar> Parameterized<T> for SpeechModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        v.push(&self.enc_mean.weight);
        v.extend(self.enc_mean.bias.as_ref());
        if let Some(l) = &self.enc_log_var {
            v.push(&l.weight);
            v.extend(l.bias.as_ref());
        }
        v.extend(self.decoder.params());
        for h in [&self.dec_mean, &self.dec_log_var] {
            v.push(&h.weight);
            v.extend(h.bias.as_ref());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        v.push(&mut self.enc_mean.weight);
        v.extend(self.enc_mean.bias.as_mut());
        if let Some(l) = &mut self.enc_log_var {
            v.push(&mut l.weight);
            v.extend(l.bias.as_mut());
        }
        v.extend(self.decoder.params_mut());
        for h in [&mut self.dec_mean, &mut self.dec_log_var] {
            v.push(&mut h.weight);
            v.extend(h.bias.as_mut());
        }
        v
    }
}
