//! Closed-form Gaussian terms of the variational lower bound.

use crate::nn::Scalar;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = −½ Σ (1 + log σ² − μ² − σ²)`.
pub fn kl_to_standard_normal<T: Scalar>(mean: &[T], log_var: &[T]) -> f64 {
    mean.iter()
        .zip(log_var)
        .map(|(&m, &lv)| {
            let (m, lv) = (m.f64(), lv.f64());
            -0.5 * (1.0 + lv - m * m - lv.exp())
        })
        .sum()
}

/// `Σ −½ (log 2π + log σ² + (x − μ)² / σ²)` over all dimensions.
pub fn gaussian_log_likelihood<T: Scalar>(x: &[T], mean: &[T], log_var: &[T]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_var)
        .map(|((&x, &m), &lv)| {
            let (d, lv) = (x.f64() - m.f64(), lv.f64());
            -0.5 * (LN_2PI + lv + d * d * (-lv).exp())
        })
        .sum()
}

/// Log density of `z` under the standard normal prior.
pub fn log_standard_normal<T: Scalar>(z: &[T]) -> f64 {
    z.iter().map(|&v| -0.5 * (LN_2PI + v.f64() * v.f64())).sum()
}

/// `z = μ + exp(½ log σ²) ⊙ ε`.
pub fn reparameterize<T: Scalar>(mean: &[T], log_var: &[T], eps: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    mean.iter().zip(log_var).zip(eps).map(|((&m, &lv), &e)| m + (half * lv).exp() * e).collect()
}

/// Squared reconstruction error used by the autoencoder baseline.
pub fn squared_error<T: Scalar>(x: &[T], mean: &[T]) -> f64 {
    x.iter().zip(mean).map(|(&a, &b)| (a.f64() - b.f64()).powi(2)).sum()
}
