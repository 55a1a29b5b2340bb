//! Lossless figures: the confidence histogram with the threshold marked and
//! image grids.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::datasets::ImageSample;
use crate::error::{Error, Result};

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const BAR: Rgb<u8> = Rgb([70, 110, 170]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const MARK: Rgb<u8> = Rgb([210, 30, 30]);

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Histogram of confidences over `[0, 1]` with a vertical line at `gamma`
/// (drawn at the left edge, dashed, when `gamma < 0`).
pub fn write_confidence_histogram(confidences: &[f64], gamma: f64, bins: usize, path: &Path) -> Result<()> {
    let bins = bins.max(1);
    let (bar_w, plot_h, margin) = (8u32, 200u32, 10u32);
    let width = bins as u32 * bar_w + 2 * margin;
    let height = plot_h + 2 * margin;
    let mut img = RgbImage::from_pixel(width, height, BG);

    let mut counts = vec![0usize; bins];
    for c in confidences {
        let b = ((c.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let base = margin + plot_h;
    for (b, &n) in counts.iter().enumerate() {
        let h = ((n as f64 / max as f64) * plot_h as f64).round() as u32;
        let x0 = margin + b as u32 * bar_w;
        for x in x0..x0 + bar_w - 1 {
            for y in base - h..base {
                img.put_pixel(x, y, BAR);
            }
        }
    }
    for x in margin..width - margin {
        img.put_pixel(x, base, AXIS);
    }
    let gx = margin + (gamma.clamp(0.0, 1.0) * (bins as u32 * bar_w - 1) as f64).round() as u32;
    for y in margin..=base {
        if gamma >= 0.0 || (y / 4) % 2 == 0 {
            img.put_pixel(gx, y, MARK);
            img.put_pixel((gx + 1).min(width - 1), y, MARK);
        }
    }
    save(&img, path)
}

/// Grid with one row per slice of images, each pixel scaled by `scale`.
/// Rows may differ in length; all images must share a shape.
pub fn write_image_grid(rows: &[Vec<&ImageSample>], scale: u32, path: &Path) -> Result<()> {
    let first = rows
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::invalid("image grid needs at least one image"))?;
    let s = first.shape();
    let scale = scale.max(1);
    let (cell_w, cell_h, gap) = (s.width as u32 * scale, s.height as u32 * scale, 2u32);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let width = cols * (cell_w + gap) + gap;
    let height = rows.len() as u32 * (cell_h + gap) + gap;
    let mut img = RgbImage::from_pixel(width, height, BG);
    for (r, row) in rows.iter().enumerate() {
        for (c, sample) in row.iter().enumerate() {
            if sample.shape() != s {
                return Err(Error::invalid("image grid entries differ in shape"));
            }
            let bytes = sample.to_u8();
            let (x0, y0) = (gap + c as u32 * (cell_w + gap), gap + r as u32 * (cell_h + gap));
            for y in 0..cell_h {
                for x in 0..cell_w {
                    let (py, px) = ((y / scale) as usize, (x / scale) as usize);
                    let o = (py * s.width + px) * s.channels;
                    let px_rgb = if s.channels == 1 {
                        Rgb([bytes[o]; 3])
                    } else {
                        Rgb([bytes[o], bytes[o + 1], bytes[o + 2]])
                    };
                    img.put_pixel(x0 + x, y0 + y, px_rgb);
                }
            }
        }
    }
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::ImageShape;

    #[test]
    fn figures_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let hist = dir.path().join("h.png");
        write_confidence_histogram(&[0.1, 0.9, 0.95, 1.0], 0.4, 20, &hist).unwrap();
        let img = image::open(&hist).unwrap().to_rgb8();
        assert!(img.pixels().any(|p| *p == MARK));

        let shape = ImageShape::new(4, 4, 3);
        let a = ImageSample::new(1, shape, vec![0.5; 48]).unwrap();
        let grid = dir.path().join("g.png");
        write_image_grid(&[vec![&a, &a], vec![&a]], 2, &grid).unwrap();
        let img = image::open(&grid).unwrap();
        assert_eq!((img.width(), img.height()), (2 * 10 + 2, 2 * 10 + 2));
    }
}
