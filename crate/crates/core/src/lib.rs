//! Differentially-private text rewriting through an autoencoder latent.
//!
//! An utterance, prefixed with its intent label, is encoded by an LSTM into a
//! fixed-size latent vector. The latent is clipped to an L2 ball and perturbed
//! with calibrated Laplace or Gaussian noise, then decoded back into a
//! label-prefixed utterance. The crate also carries the evaluation harness:
//! an intent classifier trained on rewritten data and a shadow-model
//! membership-inference attack measured by ROC AUC.

pub mod autoencoder;
pub mod checkpoint;
pub mod classifier;
pub mod dp;
pub mod error;
pub mod mia;
pub mod nn;
pub mod pipeline;
pub mod text;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
