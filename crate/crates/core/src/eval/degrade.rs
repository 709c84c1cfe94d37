use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use serde::{Deserialize, Serialize};

use crate::data::RgbImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    Jpeg,
    GaussianBlur,
}

impl DegradationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Jpeg => "jpeg",
            Self::GaussianBlur => "gaussian_blur",
        }
    }

    /// The level that leaves an image untouched, if the kind has one.
    pub fn identity_level(self) -> Option<u32> {
        match self {
            Self::Jpeg => None,
            Self::GaussianBlur => Some(0),
        }
    }

    pub fn check_level(self, level: u32) -> Result<()> {
        let ok = match self {
            Self::Jpeg => (1..=100).contains(&level),
            Self::GaussianBlur => level == 0 || level % 2 == 1,
        };
        if ok {
            Ok(())
        } else {
            let want = match self {
                Self::Jpeg => "a quality in 1..=100",
                Self::GaussianBlur => "0 or an odd kernel size",
            };
            Err(Error::InvalidArgument(format!(
                "invalid {} level {level}: expected {want}",
                self.as_str()
            )))
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jpeg" => Ok(Self::Jpeg),
            "blur" | "gaussian_blur" => Ok(Self::GaussianBlur),
            other => Err(Error::InvalidArgument(format!(
                "unknown degradation `{other}` (expected jpeg or blur)"
            ))),
        }
    }
}

/// A degradation kind and the ordered levels to sweep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub levels: Vec<u32>,
}

impl DegradationSpec {
    pub const JPEG_QUALITIES: [u32; 6] = [100, 90, 80, 70, 60, 50];
    pub const BLUR_KERNELS: [u32; 6] = [0, 3, 7, 11, 15, 19];

    pub fn new(kind: DegradationKind, levels: Vec<u32>) -> Result<Self> {
        for &l in &levels {
            kind.check_level(l)?;
        }
        Ok(Self { kind, levels })
    }

    /// Parses a comma-separated level list such as `100,90,80`.
    pub fn parse(kind: DegradationKind, levels: &str) -> Result<Self> {
        let levels = levels
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<u32>()
                    .map_err(|_| Error::InvalidArgument(format!("invalid {kind} level `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(kind, levels)
    }

    pub fn standard(kind: DegradationKind) -> Self {
        let levels = match kind {
            DegradationKind::Jpeg => Self::JPEG_QUALITIES.to_vec(),
            DegradationKind::GaussianBlur => Self::BLUR_KERNELS.to_vec(),
        };
        Self { kind, levels }
    }
}

pub fn degrade(image: &RgbImage, kind: DegradationKind, level: u32) -> Result<RgbImage> {
    kind.check_level(level)?;
    match kind {
        DegradationKind::Jpeg => {
            let bytes = jpeg_bytes(image, level as u8)?;
            let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
                .map_err(|e| Error::InvalidArgument(format!("jpeg decode: {e}")))?;
            Ok(RgbImage::from_rgb8(&decoded.to_rgb8()))
        }
        DegradationKind::GaussianBlur => Ok(gaussian_blur(image, level as usize)),
    }
}

/// Baseline JPEG encoding of the 8-bit rendering of `image`.
pub fn jpeg_bytes(image: &RgbImage, quality: u8) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    JpegEncoder::new_with_quality(&mut out, quality)
        .encode_image(&image.to_rgb8())
        .map_err(|e| Error::InvalidArgument(format!("jpeg encode: {e}")))?;
    Ok(out.into_inner())
}

/// `σ = 0.3·((k − 1)/2 − 1) + 0.8`.
pub fn blur_sigma(kernel: usize) -> f64 {
    0.3 * ((kernel as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

pub fn gaussian_kernel(kernel: usize) -> Vec<f64> {
    let sigma = blur_sigma(kernel);
    let r = (kernel / 2) as f64;
    let w: Vec<f64> = (0..kernel)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur; kernel 0 returns the input unchanged.
pub fn gaussian_blur(image: &RgbImage, kernel: usize) -> RgbImage {
    if kernel <= 1 {
        return image.clone();
    }
    let weights = gaussian_kernel(kernel);
    let r = (kernel / 2) as isize;
    let (w, h) = (image.width(), image.height());
    let src = image.data();
    // Each tap adds w·(neighbour − centre), so flat regions stay bit-exact.
    let pass = |src: &[f64], horizontal: bool| {
        let mut dst = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let centre = src[(y * w + x) * 3 + c];
                    let mut acc = 0.0;
                    for (k, &wk) in weights.iter().enumerate() {
                        let d = k as isize - r;
                        let (sx, sy) = if horizontal {
                            (reflect(x as isize + d, w), y)
                        } else {
                            (x, reflect(y as isize + d, h))
                        };
                        acc += wk * (src[(sy * w + sx) * 3 + c] - centre);
                    }
                    dst[(y * w + x) * 3 + c] = centre + acc;
                }
            }
        }
        dst
    };
    let tmp = pass(src, true);
    let out = pass(&tmp, false);
    RgbImage::new(w, h, out).expect("same dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> RgbImage {
        let data = (0..w * h * 3)
            .map(|i| ((i * 7919) % 251) as f64)
            .collect();
        RgbImage::new(w, h, data).unwrap()
    }

    #[test]
    fn sigma_formula() {
        assert!((blur_sigma(3) - 0.8).abs() < 1e-15);
        assert!((blur_sigma(7) - 1.4).abs() < 1e-15);
        assert!((blur_sigma(19) - 3.2).abs() < 1e-12);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<_> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn kernel_zero_is_identity() {
        let img = textured(9, 7);
        assert_eq!(degrade(&img, DegradationKind::GaussianBlur, 0).unwrap(), img);
    }

    #[test]
    fn constant_image_survives_blur() {
        let img = RgbImage::filled(10, 6, [12.0, 200.0, 77.0]);
        for k in [3, 7, 11, 19] {
            assert_eq!(gaussian_blur(&img, k), img);
        }
    }

    #[test]
    fn invalid_levels() {
        assert!(degrade(&textured(4, 4), DegradationKind::GaussianBlur, 4).is_err());
        assert!(degrade(&textured(4, 4), DegradationKind::Jpeg, 0).is_err());
        assert!(degrade(&textured(4, 4), DegradationKind::Jpeg, 101).is_err());
        assert!(DegradationSpec::parse(DegradationKind::Jpeg, "100,abc").is_err());
    }

    #[test]
    fn jpeg_quality_shrinks_file() {
        let img = textured(32, 32);
        let hi = jpeg_bytes(&img, 100).unwrap();
        let lo = jpeg_bytes(&img, 50).unwrap();
        assert!(lo.len() < hi.len());
        let out = degrade(&img, DegradationKind::Jpeg, 100).unwrap();
        assert_eq!((out.width(), out.height()), (32, 32));
        assert_eq!(jpeg_bytes(&img, 70).unwrap(), jpeg_bytes(&img, 70).unwrap());
    }
}
