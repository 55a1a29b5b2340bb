//! Image sets, deterministic splitting, the procedural toy dataset,
//! stochastic augmentation and benchmark ingestion.

mod augment;
mod benchmark;
mod export;
mod split;
mod toy;

pub use augment::{augment_stochastic, augment_with, flip_horizontal, AugmentOptions};
pub use benchmark::{load_benchmark, load_benchmark_partition, Partition};
pub use export::{
    export_augmented, export_labeled, import_augmented, import_labeled, AugmentedEntry,
    AugmentedManifest, LabeledEntry, LabeledManifest, SampleSource, MANIFEST_SCHEMA_VERSION,
};
pub use split::{split_dataset, SplitSpec};
pub use toy::{generate_toy_dataset, generate_toy_with, ToyParams};

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageShape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An image with pixels in `[0, 1]`, stored height-major `(H, W, C)`.
/// Pixel storage is shared, so cloning a sample is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: u64,
    shape: ImageShape,
    pixels: Arc<[f32]>,
}

impl ImageSample {
    pub fn new(id: u64, shape: ImageShape, pixels: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::invalid(format!("image shape {shape:?} has a zero dimension")));
        }
        if pixels.len() != shape.len() {
            return Err(Error::invalid(format!(
                "image {id}: {} pixels for shape {shape:?}",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("image {id}: pixel value {v} outside [0, 1]")));
        }
        Ok(ImageSample {
            id,
            shape,
            pixels: pixels.into(),
        })
    }

    /// Build from 8-bit pixels (value / 255).
    pub fn from_u8(id: u64, shape: ImageShape, bytes: &[u8]) -> Result<Self> {
        Self::new(id, shape, bytes.iter().map(|b| f32::from(*b) / 255.0).collect())
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn at(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.pixels[(row * self.shape.width + col) * self.shape.channels + channel]
    }

    /// Pixels rounded to the nearest 8-bit level.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// The same image snapped to 8-bit levels, i.e. exactly what a PNG export holds.
    pub fn quantized(&self) -> ImageSample {
        Self::from_u8(self.id, self.shape, &self.to_u8()).expect("quantized pixels are in range")
    }

    /// Bilinear resampling to `height x width` (pixel centers aligned).
    pub fn resized(&self, height: usize, width: usize) -> ImageSample {
        let src = self.shape;
        if (src.height, src.width) == (height, width) {
            return self.clone();
        }
        let shape = ImageShape::new(height, width, src.channels);
        let coord = |i: usize, from: usize, to: usize| {
            let x = ((i as f64 + 0.5) * from as f64 / to as f64 - 0.5).clamp(0.0, (from - 1) as f64);
            let lo = x.floor() as usize;
            (lo, (lo + 1).min(from - 1), x - lo as f64)
        };
        let mut out = Vec::with_capacity(shape.len());
        for r in 0..height {
            let (r0, r1, fr) = coord(r, src.height, height);
            for c in 0..width {
                let (c0, c1, fc) = coord(c, src.width, width);
                for ch in 0..src.channels {
                    let top = f64::from(self.at(r0, c0, ch)) * (1.0 - fc) + f64::from(self.at(r0, c1, ch)) * fc;
                    let bottom = f64::from(self.at(r1, c0, ch)) * (1.0 - fc) + f64::from(self.at(r1, c1, ch)) * fc;
                    out.push((top * (1.0 - fr) + bottom * fr).clamp(0.0, 1.0) as f32);
                }
            }
        }
        ImageSample {
            id: self.id,
            shape,
            pixels: out.into(),
        }
    }

    pub fn with_id(&self, id: u64) -> ImageSample {
        ImageSample {
            id,
            shape: self.shape,
            pixels: Arc::clone(&self.pixels),
        }
    }
}

/// Pack samples into an `(N, C, H, W)` tensor.
pub fn to_tensor<'a, I>(samples: I, shape: ImageShape) -> Tensor
where
    I: IntoIterator<Item = &'a ImageSample>,
{
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let mut data = Vec::new();
    let mut n = 0;
    for s in samples {
        debug_assert_eq!(s.shape, shape);
        let start = data.len();
        data.resize(start + shape.len(), 0.0);
        let dst = &mut data[start..];
        for row in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    dst[(ch * h + row) * w + col] = f64::from(s.pixels[(row * w + col) * c + ch]);
                }
            }
        }
        n += 1;
    }
    Tensor::from_vec(&[n, c, h, w], data).expect("packed tensor size")
}

/// Unpack row `i` of an `(N, C, H, W)` tensor into a sample, clamping to `[0, 1]`.
pub fn sample_from_tensor(t: &Tensor, i: usize, id: u64) -> ImageSample {
    let s = t.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let src = t.row(i);
    let mut pixels = vec![0.0f32; h * w * c];
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                pixels[(row * w + col) * c + ch] =
                    src[(ch * h + row) * w + col].clamp(0.0, 1.0) as f32;
            }
        }
    }
    ImageSample {
        id,
        shape: ImageShape::new(h, w, c),
        pixels: pixels.into(),
    }
}

/// Images with integer class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    samples: Vec<ImageSample>,
    labels: Vec<usize>,
    num_classes: usize,
}

fn check_uniform(samples: &[ImageSample]) -> Result<()> {
    if let Some(first) = samples.first() {
        if let Some(s) = samples.iter().find(|s| s.shape != first.shape) {
            return Err(Error::invalid(format!(
                "image {} has shape {:?}, expected {:?}",
                s.id, s.shape, first.shape
            )));
        }
    }
    Ok(())
}

impl LabeledSet {
    pub fn new(samples: Vec<ImageSample>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if samples.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l >= num_classes) {
            return Err(Error::invalid(format!("label {l} outside [0, {num_classes})")));
        }
        check_uniform(&samples)?;
        Ok(LabeledSet {
            samples,
            labels,
            num_classes,
        })
    }

    pub fn empty(num_classes: usize) -> Self {
        LabeledSet {
            samples: Vec::new(),
            labels: Vec::new(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn shape(&self) -> Option<ImageShape> {
        self.samples.first().map(|s| s.shape)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ImageSample, usize)> {
        self.samples.iter().zip(self.labels.iter().copied())
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Samples whose id is in `ids`, in the order of `ids`.
    pub fn select_ids(&self, ids: &[u64]) -> Result<LabeledSet> {
        let index: std::collections::HashMap<u64, usize> =
            self.samples.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        let idx = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("sample id {id} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset(&idx))
    }

    /// Concatenation; ids must stay unique.
    pub fn union(&self, other: &LabeledSet) -> Result<LabeledSet> {
        if self.num_classes != other.num_classes {
            return Err(Error::invalid("cannot merge sets with different class counts"));
        }
        let ids: HashSet<u64> = self.samples.iter().map(|s| s.id).collect();
        if let Some(s) = other.samples.iter().find(|s| ids.contains(&s.id)) {
            return Err(Error::invalid(format!("duplicate sample id {} in union", s.id)));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledSet::new(samples, labels, self.num_classes)
    }

    /// Drop labels.
    pub fn unlabeled(&self) -> UnlabeledSet {
        UnlabeledSet {
            samples: self.samples.clone(),
        }
    }
}

/// Images without labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnlabeledSet {
    samples: Vec<ImageSample>,
}

impl UnlabeledSet {
    pub fn new(samples: Vec<ImageSample>) -> Result<Self> {
        check_uniform(&samples)?;
        Ok(UnlabeledSet { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn shape(&self) -> Option<ImageShape> {
        self.samples.first().map(|s| s.shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_keeps_constants_and_averages_upsampled_blocks() {
        let shape = ImageShape::new(2, 2, 1);
        let flat = ImageSample::new(0, shape, vec![0.25; 4]).unwrap();
        assert!(flat.resized(5, 3).pixels().iter().all(|v| (v - 0.25).abs() < 1e-7));
        let s = ImageSample::new(1, shape, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let up = s.resized(2, 4);
        assert_eq!(up.shape(), ImageShape::new(2, 4, 1));
        assert_eq!(&up.pixels()[..4], &[0.0, 0.25, 0.75, 1.0]);
        let down = up.resized(2, 2);
        assert_eq!(down.pixels(), &[0.125, 0.875, 0.125, 0.875]);
        assert_eq!(s.resized(2, 2), s);
    }

    fn img(id: u64, v: f32) -> ImageSample {
        ImageSample::new(id, ImageShape::new(2, 3, 3), vec![v; 18]).unwrap()
    }

    #[test]
    fn sample_rejects_out_of_range_and_bad_length() {
        let s = ImageShape::new(2, 2, 1);
        assert!(ImageSample::new(0, s, vec![0.5; 3]).is_err());
        assert!(ImageSample::new(0, s, vec![0.5, 0.5, 1.5, 0.0]).is_err());
        assert!(ImageSample::new(0, ImageShape::new(0, 2, 1), vec![]).is_err());
    }

    #[test]
    fn labeled_set_invariants() {
        assert!(LabeledSet::new(vec![img(0, 0.1)], vec![], 2).is_err());
        assert!(LabeledSet::new(vec![img(0, 0.1)], vec![2], 2).is_err());
        let other = ImageSample::new(1, ImageShape::new(3, 2, 3), vec![0.0; 18]).unwrap();
        assert!(LabeledSet::new(vec![img(0, 0.1), other], vec![0, 1], 2).is_err());
        let a = LabeledSet::new(vec![img(0, 0.1)], vec![1], 2).unwrap();
        assert!(a.union(&a).is_err());
    }

    #[test]
    fn tensor_packing_round_trips() {
        let shape = ImageShape::new(2, 3, 3);
        let pixels: Vec<f32> = (0..18).map(|i| i as f32 / 17.0).collect();
        let s = ImageSample::new(4, shape, pixels).unwrap();
        let t = to_tensor([&s], shape);
        assert_eq!(t.shape(), &[1, 3, 2, 3]);
        // channel-major inside the tensor
        assert_eq!(t.data()[1] as f32, s.at(0, 1, 0));
        assert_eq!(sample_from_tensor(&t, 0, 4), s);
    }
}
