//! Procedural toy images: each class is a shape drawn in its own hue family on
//! a random background, with random position, scale, hue jitter and pixel noise.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImageSample, ImageShape, LabeledSet};
use crate::error::{Error, Result};
use crate::rng::{derive_index, rng_from, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyParams {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Half-width of the uniform hue jitter, as a fraction of one class's hue band.
    #[serde(default = "default_hue_jitter")]
    pub hue_jitter: f64,
    /// Probability that an image carries a second, smaller shape of a random class.
    #[serde(default = "default_distractor")]
    pub distractor_prob: f64,
}

fn default_noise() -> f64 {
    0.12
}
fn default_hue_jitter() -> f64 {
    0.6
}
fn default_distractor() -> f64 {
    0.3
}

impl ToyParams {
    pub fn new(num_classes: usize, per_class: usize, image_size: usize) -> Self {
        ToyParams {
            num_classes,
            per_class,
            image_size,
            noise_std: default_noise(),
            hue_jitter: default_hue_jitter(),
            distractor_prob: default_distractor(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disc,
    Square,
    Triangle,
    Cross,
    Ring,
    Bar,
    Diamond,
    Stripes,
}

const SHAPES: [Shape; 8] = [
    Shape::Disc,
    Shape::Square,
    Shape::Triangle,
    Shape::Cross,
    Shape::Ring,
    Shape::Bar,
    Shape::Diamond,
    Shape::Stripes,
];

impl Shape {
    /// Soft coverage of the point `(u, v)` given in shape-local units
    /// (shape roughly spans [-1, 1]); `edge` is the anti-aliasing width.
    fn coverage(self, u: f64, v: f64, edge: f64) -> f64 {
        let inside = |d: f64| (0.5 - d / edge).clamp(0.0, 1.0);
        match self {
            Shape::Disc => inside((u * u + v * v).sqrt() - 1.0),
            Shape::Square => inside(u.abs().max(v.abs()) - 0.8),
            Shape::Triangle => {
                let (n, lift) = (1.991, 0.95 * (v + 1.0));
                let right = (1.75 * u - lift) / n;
                let left = (-1.75 * u - lift) / n;
                inside(right.max(left).max(v - 0.75))
            }
            Shape::Cross => {
                let arm_h = (u.abs() - 1.0).max(v.abs() - 0.3);
                let arm_v = (v.abs() - 1.0).max(u.abs() - 0.3);
                inside(arm_h.min(arm_v))
            }
            Shape::Ring => inside(((u * u + v * v).sqrt() - 0.75).abs() - 0.25),
            Shape::Bar => inside((u.abs() - 1.0).max(v.abs() - 0.35)),
            Shape::Diamond => inside(u.abs() + v.abs() - 1.0),
            Shape::Stripes => {
                let body = u.abs().max(v.abs()) - 0.9;
                let stripe = ((u + v) * 2.5).sin().abs() - 0.5;
                inside(body.max(stripe * 0.4))
            }
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

struct Stamp {
    shape: Shape,
    color: [f64; 3],
    cx: f64,
    cy: f64,
    radius: f64,
    angle: f64,
}

fn class_stamp(params: &ToyParams, class: usize, scale: f64, rng: &mut Rng) -> Stamp {
    let size = params.image_size as f64;
    let band = 1.0 / params.num_classes as f64;
    let hue = (class as f64 + 0.5) * band + rng.random_range(-1.0..1.0) * params.hue_jitter * band;
    let color = hsv_to_rgb(
        hue,
        rng.random_range(0.55..1.0),
        rng.random_range(0.6..1.0),
    );
    let radius = size * scale * rng.random_range(0.22..0.36);
    let margin = radius * 0.7;
    Stamp {
        shape: SHAPES[class % SHAPES.len()],
        color,
        cx: rng.random_range(margin..size - margin),
        cy: rng.random_range(margin..size - margin),
        radius,
        angle: rng.random_range(-0.35..0.35),
    }
}

fn render(params: &ToyParams, class: usize, rng: &mut Rng) -> Vec<u8> {
    let n = params.image_size;
    let bg_base = rng.random_range(0.1..0.6);
    let tint: [f64; 3] = std::array::from_fn(|_| bg_base + rng.random_range(-0.1..0.1));
    let grad = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
    let mut stamps = vec![class_stamp(params, class, 1.0, rng)];
    if rng.random_bool(params.distractor_prob.clamp(0.0, 1.0)) {
        let other = rng.random_range(0..params.num_classes);
        stamps.insert(0, class_stamp(params, other, 0.55, rng));
    }
    let noise = Normal::new(0.0, params.noise_std.max(0.0)).unwrap();
    let mut out = Vec::with_capacity(n * n * 3);
    for row in 0..n {
        for col in 0..n {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            let ramp = grad[0] * (x / n as f64 - 0.5) + grad[1] * (y / n as f64 - 0.5);
            let mut px: [f64; 3] = std::array::from_fn(|c| tint[c] + ramp);
            for s in &stamps {
                let (dx, dy) = ((x - s.cx) / s.radius, (y - s.cy) / s.radius);
                let (sin, cos) = s.angle.sin_cos();
                let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                let m = s.shape.coverage(u, v, 1.5 / s.radius);
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - m) + s.color[c] * m;
                }
            }
            for v in px {
                let v = (v + noise.sample(rng)).clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    out
}

/// `num_classes * per_class` RGB images of size `image_size`, ordered class by
/// class, with ids `0..n`. Pixels are 8-bit levels so exports are lossless.
pub fn generate_toy_dataset(
    num_classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<LabeledSet> {
    generate_toy_with(&ToyParams::new(num_classes, per_class, image_size), seed)
}

pub fn generate_toy_with(params: &ToyParams, seed: u64) -> Result<LabeledSet> {
    if params.num_classes < 2 || params.per_class < 1 || params.image_size < 8 {
        return Err(Error::invalid(format!(
            "toy dataset needs num_classes >= 2, per_class >= 1, image_size >= 8; got {}, {}, {}",
            params.num_classes, params.per_class, params.image_size
        )));
    }
    let shape = ImageShape::new(params.image_size, params.image_size, 3);
    let mut samples = Vec::with_capacity(params.num_classes * params.per_class);
    let mut labels = Vec::with_capacity(samples.capacity());
    for class in 0..params.num_classes {
        for k in 0..params.per_class {
            let id = (class * params.per_class + k) as u64;
            let mut rng = rng_from(derive_index(seed, id));
            samples.push(ImageSample::from_u8(id, shape, &render(params, class, &mut rng))?);
            labels.push(class);
        }
    }
    LabeledSet::new(samples, labels, params.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_class_counts() {
        let d = generate_toy_dataset(4, 25, 16, 7).unwrap();
        assert_eq!(d.len(), 100);
        for c in 0..4 {
            assert_eq!(d.labels().iter().filter(|l| **l == c).count(), 25);
        }
        assert_eq!(d.shape(), Some(ImageShape::new(16, 16, 3)));
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let a = generate_toy_dataset(4, 25, 16, 7).unwrap();
        let b = generate_toy_dataset(4, 25, 16, 7).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x.to_u8(), y.to_u8());
        }
        let c = generate_toy_dataset(4, 25, 16, 8).unwrap();
        assert_ne!(a.samples()[0].to_u8(), c.samples()[0].to_u8());
    }

    #[test]
    fn invalid_sizes() {
        assert!(generate_toy_dataset(1, 5, 16, 0).is_err());
        assert!(generate_toy_dataset(2, 0, 16, 0).is_err());
        assert!(generate_toy_dataset(2, 5, 7, 0).is_err());
    }
}
