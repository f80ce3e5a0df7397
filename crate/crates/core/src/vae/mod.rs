//! The speech VAE, its autoencoder baseline, and feature normalization.

mod loss;
mod model;
mod normalize;

pub use loss::{gaussian_log_likelihood, kl_to_standard_normal, log_standard_normal, reparameterize, squared_error};
pub use model::{recognition_trunk, Arch, ElboParts, GaussianParams, LossReport, ModelKind, SpeechModel};
pub use normalize::{Normalizer, MIN_STD_DB};
