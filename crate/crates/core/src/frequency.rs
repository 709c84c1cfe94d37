//! Grayscale conversion and the ideal high-pass prompt image.
//!
//! Planes are `height × width` matrices.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::autograd::Matrix;
use crate::data::RgbImage;
use crate::error::{Error, Result};

/// Default cutoff, as a fraction of `min(W, H) / 2`.
pub const DEFAULT_CUTOFF: f64 = 0.25;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// BT.601 luma, rounded half up to integer levels.
pub fn to_grayscale(image: &RgbImage) -> Matrix {
    Matrix::from_shape_fn((image.height(), image.width()), |(y, x)| {
        luma(&image.pixel(x, y))
    })
}

/// Grayscale from an interleaved buffer; only 3 channels are accepted.
pub fn grayscale_from_interleaved(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
) -> Result<Matrix> {
    if channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "grayscale conversion needs 3 channels, got {channels}"
        )));
    }
    if data.len() != width * height * 3 {
        return Err(Error::shape("grayscale", "buffer length does not match dimensions"));
    }
    Ok(Matrix::from_shape_fn((height, width), |(y, x)| {
        let i = (y * width + x) * 3;
        luma(&data[i..i + 3])
    }))
}

fn luma(rgb: &[f64]) -> f64 {
    let v = LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2];
    (v + 0.5).floor().clamp(0.0, 255.0)
}

/// Signed frequency of FFT bin `k` out of `n`.
fn centered(k: usize, n: usize) -> f64 {
    if k <= (n - 1) / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Radius of the cutoff disk in frequency bins.
pub fn cutoff_radius(width: usize, height: usize, cutoff: f64) -> f64 {
    cutoff * width.min(height) as f64 / 2.0
}

/// Distance of bin `(u, v)` (row `v`, column `u`) from the spectrum center.
pub fn radial_distance(u: usize, v: usize, width: usize, height: usize) -> f64 {
    centered(u, width).hypot(centered(v, height))
}

fn fft_2d(buf: &mut [Complex<f64>], width: usize, height: usize, direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(width, direction);
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(height, direction);
    let mut column = vec![Complex::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
}

/// Unnormalized forward 2-D DFT, row-major `height × width`.
pub fn spectrum(plane: &Matrix) -> Vec<Complex<f64>> {
    let (height, width) = plane.dim();
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_2d(&mut buf, width, height, FftDirection::Forward);
    buf
}

/// Spectral energy strictly inside and outside-or-on the cutoff disk.
pub fn band_energy(plane: &Matrix, cutoff: f64) -> (f64, f64) {
    let (height, width) = plane.dim();
    let radius = cutoff_radius(width, height, cutoff);
    let spec = spectrum(plane);
    let mut inside = 0.0;
    let mut outside = 0.0;
    for v in 0..height {
        for u in 0..width {
            let e = spec[v * width + u].norm_sqr();
            if radial_distance(u, v, width, height) < radius {
                inside += e;
            } else {
                outside += e;
            }
        }
    }
    (inside, outside)
}

/// Ideal high-pass: zero every coefficient closer than
/// `cutoff · min(W, H) / 2` to the spectrum center, invert, keep the real
/// part. The DC term always falls inside the disk, so the result is
/// zero-mean.
pub fn highpass_prompt(gray: &Matrix, cutoff: f64) -> Result<Matrix> {
    let (height, width) = gray.dim();
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("high-pass input has a zero dimension".into()));
    }
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::InvalidArgument(format!("cutoff {cutoff} outside (0, 1)")));
    }
    let radius = cutoff_radius(width, height, cutoff);
    let mut buf = spectrum(gray);
    for v in 0..height {
        for u in 0..width {
            if radial_distance(u, v, width, height) < radius {
                buf[v * width + u] = Complex::default();
            }
        }
    }
    fft_2d(&mut buf, width, height, FftDirection::Inverse);
    let norm = (width * height) as f64;
    Ok(Matrix::from_shape_fn((height, width), |(y, x)| {
        buf[y * width + x].re / norm
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_cases() {
        let white = RgbImage::filled(2, 2, [255.0; 3]);
        assert!(to_grayscale(&white).iter().all(|&v| v == 255.0));
        let black = RgbImage::filled(2, 2, [0.0; 3]);
        assert!(to_grayscale(&black).iter().all(|&v| v == 0.0));
        let red = RgbImage::filled(1, 1, [255.0, 0.0, 0.0]);
        assert_eq!(to_grayscale(&red)[[0, 0]], 76.0);
    }

    #[test]
    fn grayscale_rejects_other_channel_counts() {
        assert!(grayscale_from_interleaved(&[0.0; 4], 1, 1, 4).is_err());
        assert!(grayscale_from_interleaved(&[0.0; 3], 1, 1, 3).is_ok());
    }

    #[test]
    fn constant_image_has_zero_prompt() {
        let plane = Matrix::from_elem((16, 12), 173.0);
        let prompt = highpass_prompt(&plane, 0.25).unwrap();
        assert!(prompt.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn checkerboard_survives_filter() {
        let plane = Matrix::from_shape_fn((8, 8), |(y, x)| if (x + y) % 2 == 0 { 200.0 } else { 40.0 });
        let prompt = highpass_prompt(&plane, 0.25).unwrap();
        for ((y, x), &v) in prompt.indexed_iter() {
            let expected = if (x + y) % 2 == 0 { 80.0 } else { -80.0 };
            assert!((v - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn cutoff_validated() {
        let plane = Matrix::zeros((4, 4));
        assert!(highpass_prompt(&plane, 0.0).is_err());
        assert!(highpass_prompt(&plane, 1.0).is_err());
        assert!(highpass_prompt(&Matrix::zeros((0, 4)), 0.5).is_err());
    }

    #[test]
    fn centered_indices() {
        assert_eq!(centered(3, 8), 3.0);
        assert_eq!(centered(4, 8), -4.0);
        assert_eq!(centered(2, 5), 2.0);
        assert_eq!(centered(3, 5), -2.0);
    }
}
