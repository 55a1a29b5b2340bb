use rand::Rng as _;

use super::ImageSample;
use crate::rng::{rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentOptions {
    pub flip: bool,
    pub crop: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            flip: true,
            crop: true,
        }
    }
}

/// Random horizontal flip (p = 0.5) followed by a random crop of the image
/// reflect-padded by `size / 8` (at least 1) pixels on every side.
pub fn augment_stochastic(x: &ImageSample, seed: u64) -> ImageSample {
    augment_with(x, AugmentOptions::default(), &mut rng_from(seed))
}

pub fn augment_with(x: &ImageSample, opts: AugmentOptions, rng: &mut Rng) -> ImageSample {
    let mut out = x.clone();
    // both draws always happen so a disabled step does not shift the stream
    let flip = rng.random_bool(0.5);
    let s = x.shape();
    let (pad_h, pad_w) = ((s.height / 8).max(1), (s.width / 8).max(1));
    let dy = rng.random_range(0..=2 * pad_h) as isize - pad_h as isize;
    let dx = rng.random_range(0..=2 * pad_w) as isize - pad_w as isize;
    if opts.flip && flip {
        out = flip_horizontal(&out);
    }
    if opts.crop {
        out = shift_reflect(&out, dy, dx);
    }
    out
}

pub fn flip_horizontal(x: &ImageSample) -> ImageSample {
    let s = x.shape();
    let mut pixels = Vec::with_capacity(s.len());
    for row in 0..s.height {
        for col in (0..s.width).rev() {
            for ch in 0..s.channels {
                pixels.push(x.at(row, col, ch));
            }
        }
    }
    ImageSample::new(x.id, s, pixels).expect("flip preserves shape and range")
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

/// Crop of the reflect-padded image whose top-left corner sits at offset
/// `(dy, dx)` relative to the original origin.
fn shift_reflect(x: &ImageSample, dy: isize, dx: isize) -> ImageSample {
    let s = x.shape();
    let mut pixels = Vec::with_capacity(s.len());
    for row in 0..s.height {
        let r = reflect(row as isize + dy, s.height);
        for col in 0..s.width {
            let c = reflect(col as isize + dx, s.width);
            for ch in 0..s.channels {
                pixels.push(x.at(r, c, ch));
            }
        }
    }
    ImageSample::new(x.id, s, pixels).expect("crop preserves shape and range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::ImageShape;
    use proptest::prelude::*;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageSample {
        let mut rng = rng_from(seed);
        let shape = ImageShape::new(h, w, 3);
        let px = (0..shape.len()).map(|_| rng.random::<f32>()).collect();
        ImageSample::new(1, shape, px).unwrap()
    }

    #[test]
    fn flip_twice_is_identity() {
        let x = random_image(16, 16, 3);
        let opts = AugmentOptions {
            flip: true,
            crop: false,
        };
        // find a seed whose flip coin comes up heads
        let once = (0..64)
            .map(|s| augment_with(&x, opts, &mut rng_from(s)))
            .find(|y| *y != x)
            .expect("some seed flips");
        assert_eq!(once, flip_horizontal(&x));
        assert_eq!(flip_horizontal(&once), x);
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 4), 1);
        assert_eq!(reflect(-2, 4), 2);
        assert_eq!(reflect(4, 4), 2);
        assert_eq!(reflect(3, 4), 3);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn same_seed_same_output() {
        let x = random_image(16, 16, 1);
        assert_eq!(augment_stochastic(&x, 9), augment_stochastic(&x, 9));
    }

    proptest! {
        #[test]
        fn augmentation_preserves_shape_and_range(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
            let x = random_image(h, w, seed);
            let y = augment_stochastic(&x, seed.wrapping_add(1));
            prop_assert_eq!(y.shape(), x.shape());
            prop_assert!(y.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
