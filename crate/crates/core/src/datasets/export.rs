//! Image directories: one lossless PNG per sample plus a `manifest.json`.

use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{ImageSample, ImageShape, LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub id: u64,
    pub label: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledManifest {
    pub schema_version: u32,
    pub num_classes: usize,
    pub image_shape: Option<ImageShape>,
    pub entries: Vec<LabeledEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Rec,
    Synth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedEntry {
    pub id: u64,
    pub source: SampleSource,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedManifest {
    pub schema_version: u32,
    pub source: SampleSource,
    pub num_classes: Option<usize>,
    pub image_shape: Option<ImageShape>,
    pub entries: Vec<AugmentedEntry>,
}

fn write_png(path: &Path, s: &ImageSample) -> Result<()> {
    let shape = s.shape();
    let (w, h) = (shape.width as u32, shape.height as u32);
    let bytes = s.to_u8();
    let res = match shape.channels {
        1 => GrayImage::from_raw(w, h, bytes).map(|i| i.save(path)),
        3 => RgbImage::from_raw(w, h, bytes).map(|i| i.save(path)),
        c => {
            return Err(Error::invalid(format!(
                "cannot export {c}-channel images as PNG"
            )))
        }
    };
    res.expect("buffer size matches shape")
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn read_png(path: &Path, id: u64, channels: usize) -> Result<ImageSample> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bytes = match channels {
        1 => img.to_luma8().into_raw(),
        _ => img.to_rgb8().into_raw(),
    };
    ImageSample::from_u8(id, ImageShape::new(h, w, channels.min(3)), &bytes)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "manifest not found".into(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn prepare(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Replace `dir` with one PNG per sample and a `{id, label, file}` manifest.
pub fn export_labeled(set: &LabeledSet, dir: &Path) -> Result<()> {
    prepare(dir)?;
    let mut entries = Vec::with_capacity(set.len());
    for (s, label) in set.iter() {
        let file = format!("{}.png", s.id);
        write_png(&dir.join(&file), s)?;
        entries.push(LabeledEntry {
            id: s.id,
            label,
            file,
        });
    }
    write_json(
        &dir.join(MANIFEST),
        &LabeledManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            num_classes: set.num_classes(),
            image_shape: set.shape(),
            entries,
        },
    )
}

pub fn import_labeled(dir: &Path) -> Result<LabeledSet> {
    let manifest: LabeledManifest = read_json(&dir.join(MANIFEST))?;
    let channels = manifest.image_shape.map_or(3, |s| s.channels);
    let mut samples = Vec::with_capacity(manifest.entries.len());
    let mut labels = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        samples.push(read_png(&dir.join(&e.file), e.id, channels)?);
        labels.push(e.label);
    }
    LabeledSet::new(samples, labels, manifest.num_classes)
}

/// Export reconstructions (`seeds[i]` is the seed image id of `rec[i]`) or
/// synthetic samples into `dir`.
pub fn export_augmented(
    dir: &Path,
    rec: Option<(&LabeledSet, &[u64])>,
    synth: Option<&UnlabeledSet>,
) -> Result<()> {
    prepare(dir)?;
    let mut entries = Vec::new();
    let (source, num_classes, shape) = match (rec, synth) {
        (Some((set, seeds)), None) => {
            if seeds.len() != set.len() {
                return Err(Error::invalid("one seed id per reconstruction required"));
            }
            for ((s, label), seed) in set.iter().zip(seeds) {
                let file = format!("{}.png", s.id);
                write_png(&dir.join(&file), s)?;
                entries.push(AugmentedEntry {
                    id: s.id,
                    source: SampleSource::Rec,
                    seed_id: Some(*seed),
                    label: Some(label),
                    file,
                });
            }
            (SampleSource::Rec, Some(set.num_classes()), set.shape())
        }
        (None, Some(set)) => {
            for s in set.samples() {
                let file = format!("{}.png", s.id);
                write_png(&dir.join(&file), s)?;
                entries.push(AugmentedEntry {
                    id: s.id,
                    source: SampleSource::Synth,
                    seed_id: None,
                    label: None,
                    file,
                });
            }
            (SampleSource::Synth, None, set.shape())
        }
        _ => return Err(Error::invalid("export exactly one of rec or synth")),
    };
    write_json(
        &dir.join(MANIFEST),
        &AugmentedManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            source,
            num_classes,
            image_shape: shape,
            entries,
        },
    )
}

/// Read an augmented directory back. Reconstructions come back labeled.
pub fn import_augmented(dir: &Path) -> Result<(AugmentedManifest, Vec<ImageSample>)> {
    let manifest: AugmentedManifest = read_json(&dir.join(MANIFEST))?;
    let channels = manifest.image_shape.map_or(3, |s| s.channels);
    let samples = manifest
        .entries
        .iter()
        .map(|e| read_png(&dir.join(&e.file), e.id, channels))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::generate_toy_dataset;

    #[test]
    fn toy_export_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_toy_dataset(3, 4, 16, 5).unwrap();
        export_labeled(&d, dir.path()).unwrap();
        let back = import_labeled(dir.path()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn augmented_manifest_fields() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_toy_dataset(2, 2, 8, 5).unwrap();
        export_augmented(dir.path(), Some((&d, &[10, 11, 12, 13])), None).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["entries"][1]["source"], "rec");
        assert_eq!(v["entries"][1]["seed_id"], 11);
        assert_eq!(v["entries"][1]["label"], 0);

        let synth = d.unlabeled();
        export_augmented(dir.path(), None, Some(&synth)).unwrap();
        let (m, samples) = import_augmented(dir.path()).unwrap();
        assert_eq!(m.source, SampleSource::Synth);
        assert!(m.entries.iter().all(|e| e.label.is_none() && e.seed_id.is_none()));
        assert_eq!(samples, synth.samples());
    }
}
