//! Classifier backbone (WideResNet family) and the VAE built around the same trunk.

mod checkpoint;
mod classifier;
mod trunk;
mod vae;

pub use checkpoint::{
    checkpoint_digest, hex_digest, CheckpointMeta, ModelKind, CHECKPOINT_SCHEMA_VERSION,
};
pub use classifier::{build_classifier, forward_logits, BlockKind, Classifier, ClassifierSpec};
pub use trunk::Trunk;
pub use vae::{build_vae, decode, encode, Vae, VaeSpec};

use crate::datasets::ImageShape;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Check that a batch is `(N, C, H, W)` with the configured image shape.
pub(crate) fn check_batch(batch: &Tensor, image: &ImageShape) -> Result<()> {
    let s = batch.shape();
    if s.len() != 4 || s[1] != image.channels || s[2] != image.height || s[3] != image.width {
        return Err(Error::invalid(format!(
            "batch shape {s:?} does not match (N, {}, {}, {})",
            image.channels, image.height, image.width
        )));
    }
    Ok(())
}
