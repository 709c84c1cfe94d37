//! Pixel grids: RGB images, binary masks and probability maps.
//!
//! All grids are stored row-major, `values[y * width + x]`.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// Mask pixels at or above this 8-bit level decode as edited.
pub const MASK_LEVEL: u8 = 128;

/// An 8-bit RGB image held as real values in `[0, 255]`, interleaved per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "RgbImage::new",
                format!("expected {} values, got {}", width * height * 3, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Quantizes to 8 bits, rounding half up and clamping.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect();
        ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }

    /// Bilinear resample (half-pixel centers, clamped edges).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let xs = crate::model::upsample::axis_weights(self.width, width);
        let ys = crate::model::upsample::axis_weights(self.height, height);
        let mut data = vec![0.0; width * height * 3];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                for c in 0..3 {
                    let at = |x: usize, y: usize| self.data[(y * self.width + x) * 3 + c];
                    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                    data[(oy * width + ox) * 3 + c] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
        Self { width, height, data }
    }
}

/// Binary ground-truth mask; 1 marks an edited pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(
                "PixelMask::new",
                format!("expected {} values, got {}", width * height, values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(u8::from(f(x, y)));
            }
        }
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    pub fn count_edited(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        Self::from_fn(width, height, |x, y| {
            let sx = (x * self.width / width).min(self.width - 1);
            let sy = (y * self.height / height).min(self.height - 1);
            self.get(sx, sy)
        })
    }

    /// Decodes a single-channel 8-bit image; levels `>= 128` become 1.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
        Ok(Self {
            width: img.width() as usize,
            height: img.height() as usize,
            values: img.as_raw().iter().map(|&v| u8::from(v >= MASK_LEVEL)).collect(),
        })
    }

    /// Writes 0/255 levels.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self.values.iter().map(|&v| v * 255).collect();
        let img: GrayImage =
            ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(self.width as u32, self.height as u32, raw)
                .expect("buffer length matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }
}

/// Per-pixel edited-class probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(
                "ProbabilityMap::new",
                format!("expected {} values, got {}", width * height, values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self { width, height, values })
    }

    pub fn uniform(width: usize, height: usize, p: f64) -> Result<Self> {
        Self::new(width, height, vec![p; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean_probability(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Bilinear resample with the same sampling grid as [`RgbImage::resize_bilinear`].
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let xs = crate::model::upsample::axis_weights(self.width, width);
        let ys = crate::model::upsample::axis_weights(self.height, height);
        let at = |x: usize, y: usize| self.values[y * self.width + x];
        let mut values = Vec::with_capacity(width * height);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                values.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
        Self { width, height, values }
    }

    /// Loads either an 8-bit single-channel PNG (`value / 255`) or the raw
    /// float grid format (see [`ProbabilityMap::save_f32`]), chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("png") => {
                let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
                Ok(Self {
                    width: img.width() as usize,
                    height: img.height() as usize,
                    values: img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect(),
                })
            }
            _ => Self::load_f32(path),
        }
    }

    fn load_f32(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::InvalidArgument(format!("{}: {msg}", path.display()));
        if bytes.len() < 8 {
            return Err(bad("truncated header"));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != width * height * 4 {
            return Err(bad("payload length does not match header"));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::new(width, height, values)
    }

    /// Raw grid: width and height as little-endian `u32`, then `f32` values.
    pub fn save_f32(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 + self.values.len() * 4);
        bytes.extend_from_slice(&(self.width as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.height as u32).to_le_bytes());
        for &v in &self.values {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self
            .values
            .iter()
            .map(|&v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect();
        let img: GrayImage =
            ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(self.width as u32, self.height as u32, raw)
                .expect("buffer length matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }
}
