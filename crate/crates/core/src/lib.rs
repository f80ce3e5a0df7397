//! Convolutional variational autoencoder for fixed-length speech segments.
//!
//! The crate covers the whole pipeline: waveform to Spec/FBank features
//! ([`dsp`]), a small differentiable layer library ([`nn`]), the VAE and its
//! autoencoder baseline ([`vae`]), training ([`train`]), latent attribute
//! arithmetic and diagnostics ([`latent`]), probe classifiers ([`probe`]) and
//! the command-line front end ([`cli`]).

pub mod error;
pub mod dsp;
pub mod nn;
pub mod rng;
pub mod vae;
pub mod checkpoint;
mod codec;
pub mod train;
pub mod latent;
pub mod probe;
pub mod cli;

pub use error::{Error, Result};
