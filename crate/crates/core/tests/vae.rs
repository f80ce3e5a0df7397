mod common;

use common::{kl_monte_carlo, randn};
use speech_vae::dsp::FeatureKind;
use speech_vae::nn::gradcheck::check_gradients;
use speech_vae::nn::{Parameterized, Tensor};
use speech_vae::rng::Rng;
use speech_vae::vae::{
    gaussian_log_likelihood, kl_to_standard_normal, log_standard_normal, reparameterize, squared_error, Arch,
    GaussianParams, ModelKind, SpeechModel,
};

fn tiny(seg_len: usize, n_bins: usize, latent: usize) -> Arch {
    Arch { seg_len, n_bins, feature_kind: FeatureKind::FBank, conv: [4, 8, 8], fc: 16, latent }
}

#[test]
fn decode_restores_input_shape_for_all_feature_geometries() {
    for kind in [FeatureKind::FBank, FeatureKind::Spec] {
        for t in [20, 100] {
            let mut rng = Rng::new(1);
            let arch = Arch::standard(t, kind);
            let m = SpeechModel::<f32>::new(arch.clone(), ModelKind::Vae, &mut rng).unwrap();
            let x = Tensor::from_fn(&arch.input_shape(2), |_| rng.normal() as f32);
            let q = m.encode(&x).unwrap();
            assert_eq!(q.mean.shape(), &[2, 128]);
            assert_eq!(q.log_var.shape(), &[2, 128]);
            assert!(q.mean.is_finite() && q.log_var.is_finite());
            let px = m.decode(&q.mean).unwrap();
            assert_eq!(px.mean.shape(), x.shape());
            assert_eq!(px.log_var.shape(), x.shape());
        }
    }
}

#[test]
fn identical_inputs_encode_identically_and_independently_of_batch() {
    let mut rng = Rng::new(2);
    let arch = Arch::standard(20, FeatureKind::FBank);
    let m = SpeechModel::<f32>::new(arch.clone(), ModelKind::Vae, &mut rng).unwrap();
    let one = Tensor::from_fn(&arch.input_shape(1), |_| rng.normal() as f32);
    let mut items: Vec<Vec<f32>> = (0..5).map(|_| (0..one.len()).map(|_| rng.normal() as f32).collect()).collect();
    items[1] = one.data().to_vec();
    items[3] = one.data().to_vec();
    let refs: Vec<&[f32]> = items.iter().map(Vec::as_slice).collect();
    let batch = Tensor::stack(&refs, &arch.input_shape(1)[1..]).unwrap();
    let qb = m.encode(&batch).unwrap();
    assert_eq!(qb.mean.item(1), qb.mean.item(3));
    let q1 = m.encode(&one).unwrap();
    for (a, b) in q1.mean.data().iter().zip(qb.mean.item(1)).chain(q1.log_var.data().iter().zip(qb.log_var.item(1))) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn mismatched_shapes_are_rejected() {
    let mut rng = Rng::new(3);
    let arch = tiny(20, 8, 4);
    let mut m = SpeechModel::<f64>::new(arch, ModelKind::Vae, &mut rng).unwrap();
    assert!(m.encode(&Tensor::zeros(&[2, 1, 20, 9])).is_err());
    assert!(m.encode(&Tensor::zeros(&[2, 1, 100, 8])).is_err());
    assert!(m.decode(&Tensor::zeros(&[2, 5])).is_err());
    let x = Tensor::zeros(&[2, 1, 20, 8]);
    assert!(m.train_loss(&x, &Tensor::zeros(&[2, 3]), false).is_err());
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = Rng::new(4);
    for _ in 0..5 {
        let mean: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let log_var: Vec<f64> = (0..6).map(|_| rng.normal() * 0.7).collect();
        let exact = kl_to_standard_normal(&mean, &log_var);
        let (mc, _) = kl_monte_carlo(&mean, &log_var, 100_000, &mut rng);
        assert!((mc - exact).abs() <= 0.01 * exact, "{mc} vs {exact}");
    }
    // Hand value: unit shift in one of three dims.
    let (mc, _) = kl_monte_carlo(&[1.0, 0.0, 0.0], &[0.0; 3], 100_000, &mut rng);
    assert!((mc - 0.5).abs() < 0.02, "{mc}");
}

#[test]
fn kl_is_nonnegative() {
    let mut rng = Rng::new(5);
    for _ in 0..1000 {
        let m: Vec<f64> = (0..4).map(|_| rng.normal() * 3.0).collect();
        let lv: Vec<f64> = (0..4).map(|_| rng.normal() * 3.0).collect();
        assert!(kl_to_standard_normal(&m, &lv) >= 0.0);
    }
}

#[test]
fn log_likelihood_matches_scalar_density() {
    let mut rng = Rng::new(6);
    for _ in 0..50 {
        let n = 1 + rng.below(10);
        let x: Vec<f64> = (0..n).map(|_| rng.normal() * 2.0).collect();
        let m: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let lv: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let want: f64 = (0..n)
            .map(|i| {
                let s2 = lv[i].exp();
                let pdf = (-(x[i] - m[i]).powi(2) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
                pdf.ln()
            })
            .sum();
        assert!((gaussian_log_likelihood(&x, &m, &lv) - want).abs() < 1e-10);
    }
}

#[test]
fn reparameterized_samples_concentrate_on_the_mean() {
    let mut rng = Rng::new(7);
    let (m, lv) = ([0.4f64, -1.2, 2.0], [0.5f64, -1.0, 1.5]);
    let n = 100_000;
    let mut acc = [0.0; 3];
    for _ in 0..n {
        let e: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        for (a, z) in acc.iter_mut().zip(reparameterize(&m, &lv, &e)) {
            *a += z / n as f64;
        }
    }
    for d in 0..3 {
        let sd = (0.5 * lv[d]).exp();
        assert!((acc[d] - m[d]).abs() <= 3.0 * sd / (n as f64).sqrt(), "dim {d}: {}", acc[d]);
    }
}

#[test]
fn elbo_with_frozen_noise_is_likelihood_minus_kl() {
    let mut rng = Rng::new(8);
    let m = SpeechModel::<f64>::new(tiny(20, 8, 4), ModelKind::Vae, &mut rng).unwrap();
    let x = randn(&[3, 1, 20, 8], &mut rng);
    let eps = randn(&[3, 4], &mut rng);
    let parts = m.elbo(&x, std::slice::from_ref(&eps)).unwrap();
    let q = m.encode(&x).unwrap();
    let px = m.decode(&q.sample(&eps).unwrap()).unwrap();
    for (i, p) in parts.iter().enumerate() {
        let ll = gaussian_log_likelihood(x.item(i), px.mean.item(i), px.log_var.item(i));
        let kl = kl_to_standard_normal(q.mean.item(i), q.log_var.item(i));
        assert_eq!(p.elbo, ll - kl);
    }
    let twice = m.elbo(&x, &[eps.clone(), eps.clone()]).unwrap();
    for (a, b) in parts.iter().zip(&twice) {
        assert!((a.elbo - b.elbo).abs() <= 1e-12 * a.elbo.abs());
    }
}

#[test]
fn elbo_lies_below_importance_sampled_evidence() {
    let mut rng = Rng::new(9);
    let m = SpeechModel::<f64>::new(tiny(4, 3, 2), ModelKind::Vae, &mut rng).unwrap();
    let x = randn(&[1, 1, 4, 3], &mut rng);
    let q = m.encode(&x).unwrap();
    let n = 10_000;
    let eps = randn(&[n, 2], &mut rng);
    let mean = Tensor::from_fn(&[n, 2], |k| q.mean.data()[k % 2]);
    let log_var = Tensor::from_fn(&[n, 2], |k| q.log_var.data()[k % 2]);
    let qn = GaussianParams { mean, log_var };
    let z = qn.sample(&eps).unwrap();
    let px = m.decode(&z).unwrap();
    let x_rep = Tensor::from_fn(&[n, 1, 4, 3], |k| x.data()[k % 12]);
    let ll = px.log_likelihood_per_item(&x_rep);
    let log_w: Vec<f64> = (0..n)
        .map(|i| {
            let log_q = gaussian_log_likelihood(z.item(i), qn.mean.item(i), qn.log_var.item(i));
            ll[i] + log_standard_normal(z.item(i)) - log_q
        })
        .collect();
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_px = top + (log_w.iter().map(|w| (w - top).exp()).sum::<f64>() / n as f64).ln();
    let elbo = log_w.iter().sum::<f64>() / n as f64;
    assert!(elbo <= log_px, "{elbo} > {log_px}");
}

#[test]
fn ae_differs_from_vae_only_by_the_log_variance_head() {
    let arch = Arch::standard(20, FeatureKind::FBank);
    let vae = SpeechModel::<f32>::new(arch.clone(), ModelKind::Vae, &mut Rng::new(1)).unwrap();
    let ae = SpeechModel::<f32>::new(arch, ModelKind::Ae, &mut Rng::new(1)).unwrap();
    assert_eq!(vae.param_count() - ae.param_count(), 512 * 128 + 128);
    let names = |m: &SpeechModel<f32>| m.params().iter().map(|p| p.name.clone()).collect::<Vec<_>>();
    let (v, a) = (names(&vae), names(&ae));
    let missing: Vec<_> = v.iter().filter(|n| !a.contains(n)).collect();
    assert_eq!(missing, ["enc.gauss.log_var.weight", "enc.gauss.log_var.bias"]);
}

#[test]
fn ae_code_and_loss() {
    let mut rng = Rng::new(10);
    let mut m = SpeechModel::<f64>::new(tiny(20, 8, 128), ModelKind::Ae, &mut rng).unwrap();
    let x = randn(&[2, 1, 20, 8], &mut rng);
    let q = m.encode(&x).unwrap();
    assert_eq!(q.mean.shape(), &[2, 128]);
    assert!(q.log_var.data().iter().all(|&v| v == 0.0));
    let r = m.train_loss(&x, &Tensor::zeros(&[2, 128]), false).unwrap();
    assert!(r.loss > 0.0 && r.kl == 0.0);
    assert_eq!(squared_error(x.data(), x.data()), 0.0);
}

#[test]
fn frozen_noise_loss_is_bitwise_repeatable() {
    let mut rng = Rng::new(11);
    let mut m = SpeechModel::<f32>::new(tiny(20, 8, 4), ModelKind::Vae, &mut rng).unwrap();
    let x = Tensor::from_fn(&[4, 1, 20, 8], |_| rng.normal() as f32);
    let eps = m.draw_eps(4, &mut rng);
    let a = m.train_loss(&x, &eps, false).unwrap();
    let b = m.train_loss(&x, &eps, false).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
}

#[test]
fn decoder_log_variance_is_clamped() {
    let mut rng = Rng::new(12);
    let mut m = SpeechModel::<f64>::new(tiny(20, 8, 4), ModelKind::Vae, &mut rng).unwrap();
    m.dec_log_var.bias.as_mut().unwrap().value.data_mut()[0] = 50.0;
    let px = m.decode(&randn(&[2, 4], &mut rng)).unwrap();
    assert!(px.log_var.data().iter().all(|&v| (-7.0..=7.0).contains(&v)));
    assert!(px.log_var.data().contains(&7.0));
}

// The AE code bias feeds a batch-normalized layer, so its exact gradient is
// zero; `floor` keeps the relative error of such entries meaningful.
fn full_loss_gradcheck(kind: ModelKind, floor: f64) -> f64 {
    let mut rng = Rng::new(13);
    let mut m = SpeechModel::<f64>::new(tiny(12, 5, 3), kind, &mut rng).unwrap();
    m.log_var_clamp = None;
    let x = randn(&[6, 1, 12, 5], &mut rng);
    let eps = m.draw_eps(6, &mut rng);
    m.zero_grad();
    m.train_loss(&x, &eps, true).unwrap();
    let r = check_gradients(&mut m, |m| m.loss_terms(&x, &eps), 1e-5, floor).unwrap();
    assert!(r.max_rel_err <= 1e-4, "{r:?}");
    r.max_rel_err
}

#[test]
fn vae_loss_gradients_match_finite_differences() {
    full_loss_gradcheck(ModelKind::Vae, 0.0);
}

#[test]
fn ae_loss_gradients_match_finite_differences() {
    full_loss_gradcheck(ModelKind::Ae, 1e-5);
}

#[test]
fn cast_preserves_the_function() {
    let mut rng = Rng::new(14);
    let m = SpeechModel::<f32>::new(tiny(20, 8, 4), ModelKind::Vae, &mut rng).unwrap();
    let m64: SpeechModel<f64> = m.cast();
    let x = Tensor::from_fn(&[2, 1, 20, 8], |_| rng.normal() as f32);
    let a = m.encode(&x).unwrap();
    let b = m64.encode(&x.cast()).unwrap();
    for (p, q) in a.mean.data().iter().zip(b.mean.data()) {
        assert!((*p as f64 - q).abs() < 1e-4);
    }
}
