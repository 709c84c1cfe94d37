//! Deterministic inputs shared by the benchmarks.

use mfpt_core::data::{PixelMask, RgbImage};

/// A smooth colour field with a few sharp stripes.
pub fn fixture_image(width: usize, height: usize) -> RgbImage {
    let mut img = RgbImage::filled(width, height, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let stripe = if (x / 3 + y / 5) % 7 == 0 { 60.0 } else { 0.0 };
            img.set_pixel(
                x,
                y,
                [
                    128.0 + 60.0 * (6.0 * u).sin() + stripe,
                    100.0 + 50.0 * (4.0 * v).cos(),
                    90.0 + 40.0 * (5.0 * (u + v)).sin() - stripe / 2.0,
                ],
            );
        }
    }
    img
}

/// A pair of overlapping rectangular masks.
pub fn fixture_masks(width: usize, height: usize) -> (PixelMask, PixelMask) {
    let pred = PixelMask::from_fn(width, height, |x, y| x < width / 2 && y < height / 2);
    let gt = PixelMask::from_fn(width, height, |x, y| x >= width / 4 && x < 3 * width / 4 && y < height / 2);
    (pred, gt)
}
