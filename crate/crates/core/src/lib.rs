//! Confidence-guided data augmentation for semi-supervised image classification.
//!
//! A supervised reference classifier scores a held-out reference split; the
//! low-confidence outliers (true-class softmax at or below `Q1 - 1.5 * IQR`)
//! seed a VAE whose reconstructions join the labeled set and whose prior
//! samples form the unlabeled set for MixMatch training. The loop can be
//! iterated with each MixMatch model becoming the next reference.

pub mod cli;
pub mod confidence;
pub mod datasets;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod mixmatch;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod supervised;
pub mod tensor;
pub mod vae_augment;
pub mod training;

pub use error::{Error, Result};
