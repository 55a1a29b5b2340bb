//! Checkpoints: a named-array archive (`<stem>.bin`) plus a JSON sidecar
//! (`<stem>.json`) recording the architecture, seed and training step.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::classifier::{build_classifier, Classifier, ClassifierSpec};
use super::vae::{build_vae, Vae, VaeSpec};
use crate::error::{Error, Result};
use crate::nn::{read_archive, write_archive, NamedArray, Parameterized};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Classifier,
    Vae,
    /// Classifier trunk without its head, used to initialise a VAE encoder.
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub architecture: serde_json::Value,
    pub seed: u64,
    pub step: usize,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

fn write_meta(path: &Path, meta: &CheckpointMeta) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_meta(path: &Path, expected: ModelKind) -> Result<CheckpointMeta> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "checkpoint sidecar not found".into(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if meta.kind != expected {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("expected a {expected:?} checkpoint, found {:?}", meta.kind),
        });
    }
    Ok(meta)
}

fn save_arrays(stem: &Path, arrays: &[NamedArray], meta: &CheckpointMeta) -> Result<()> {
    let (bin, json) = paths(stem);
    if let Some(dir) = bin.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_archive(&bin, arrays)?;
    write_meta(&json, meta)
}

fn load_into<M: Parameterized>(model: &mut M, bin: &Path, allow_extra: bool) -> Result<()> {
    let arrays = read_archive(bin)?;
    model
        .load_named_arrays(&arrays, allow_extra)
        .map_err(|message| Error::Checkpoint {
            path: bin.to_path_buf(),
            message,
        })
}

fn architecture<T: Serialize>(spec: &T) -> serde_json::Value {
    serde_json::to_value(spec).expect("architecture specs serialize")
}

impl Classifier {
    pub fn save(&self, stem: &Path, seed: u64, step: usize) -> Result<()> {
        let meta = CheckpointMeta {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind: ModelKind::Classifier,
            architecture: architecture(self.spec()),
            seed,
            step,
        };
        save_arrays(stem, &self.named_arrays(), &meta)
    }

    pub fn load(stem: &Path) -> Result<(Classifier, CheckpointMeta)> {
        let (bin, json) = paths(stem);
        let meta = read_meta(&json, ModelKind::Classifier)?;
        let spec: ClassifierSpec =
            serde_json::from_value(meta.architecture.clone()).map_err(|e| Error::json(&json, e))?;
        let mut model = build_classifier(&spec, meta.seed)?;
        load_into(&mut model, &bin, false)?;
        Ok((model, meta))
    }

    /// Save only the trunk, for use as a VAE encoder initialisation.
    pub fn save_trunk(&self, stem: &Path, seed: u64, step: usize) -> Result<()> {
        let meta = CheckpointMeta {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind: ModelKind::Encoder,
            architecture: architecture(self.spec()),
            seed,
            step,
        };
        let arrays: Vec<NamedArray> = self
            .named_arrays()
            .into_iter()
            .filter(|a| a.name.starts_with("trunk."))
            .collect();
        save_arrays(stem, &arrays, &meta)
    }
}

impl Vae {
    pub fn save(&self, stem: &Path, seed: u64, step: usize) -> Result<()> {
        let meta = CheckpointMeta {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind: ModelKind::Vae,
            architecture: architecture(self.spec()),
            seed,
            step,
        };
        save_arrays(stem, &self.named_arrays(), &meta)
    }

    pub fn load(stem: &Path) -> Result<(Vae, CheckpointMeta)> {
        let (bin, json) = paths(stem);
        let meta = read_meta(&json, ModelKind::Vae)?;
        let spec: VaeSpec =
            serde_json::from_value(meta.architecture.clone()).map_err(|e| Error::json(&json, e))?;
        let mut vae = build_vae(&spec, meta.seed)?;
        load_into(&mut vae, &bin, false)?;
        Ok((vae, meta))
    }

    /// Overwrite the encoder trunk with a pretrained encoder checkpoint.
    pub fn load_encoder(&mut self, stem: &Path) -> Result<()> {
        let (bin, json) = paths(stem);
        let meta = read_meta(&json, ModelKind::Encoder)?;
        let spec: ClassifierSpec =
            serde_json::from_value(meta.architecture).map_err(|e| Error::json(&json, e))?;
        let ours = &self.spec().encoder;
        if (spec.block, spec.depth, spec.width, spec.base_channels, &spec.image)
            != (ours.block, ours.depth, ours.width, ours.base_channels, &ours.image)
        {
            return Err(Error::Checkpoint {
                path: json,
                message: "encoder architecture does not match the VAE trunk".into(),
            });
        }
        let arrays = read_archive(&bin)?;
        self.trunk
            .load_named_arrays(&arrays, false)
            .map_err(|message| Error::Checkpoint { path: bin, message })
    }
}

/// SHA-256 of a checkpoint archive, hex encoded.
pub fn checkpoint_digest(stem: &Path) -> Result<String> {
    let bin = stem.with_extension("bin");
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
