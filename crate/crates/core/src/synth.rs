//! Deterministic synthetic edit dataset.
//!
//! Every source image is a smooth colour field with a few flat shapes and
//! mild sensor noise. Its edited variant re-synthesizes one contiguous
//! region with texture copied from elsewhere in the image plus fine grain,
//! so the edit differs from its surroundings mainly in high frequencies.
//! Sources alternate between an authentic and an edited record, and whole
//! sources are dealt round-robin to splits so variants never leak.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{write_samples, DatasetManifest, ImageSample, PixelMask, RgbImage, Role, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Fraction of the image covered by each planted edit.
    pub area_ratio: f64,
    /// Splits dealt to consecutive sources, cycling.
    pub split_cycle: Vec<Split>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 8,
            width: 64,
            height: 64,
            seed: 0,
            area_ratio: 0.1,
            split_cycle: vec![Split::Train, Split::Val, Split::Test],
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        if self.width < 4 || self.height < 4 {
            return Err(Error::InvalidArgument("synthetic images must be at least 4x4".into()));
        }
        if !(self.area_ratio > 0.0 && self.area_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "edit area ratio {} outside (0, 1)",
                self.area_ratio
            )));
        }
        if self.split_cycle.is_empty() {
            return Err(Error::InvalidArgument("split cycle is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub record: ImageSample,
    pub image: RgbImage,
    /// Present for edited samples.
    pub mask: Option<PixelMask>,
}

/// Generates all samples in memory. Sample `2j` is the authentic image of
/// source `j` and sample `2j + 1` its edited variant.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let sources = cfg.count.div_ceil(2);
    let mut out = Vec::with_capacity(cfg.count);
    for j in 0..sources {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(j as u64);
        let split = cfg.split_cycle[j % cfg.split_cycle.len()];
        let source_id = format!("src{j:04}");
        let base = source_image(&mut rng, cfg.width, cfg.height);
        let record = |role: Role, suffix: &str, mask: bool| {
            let id = format!("{source_id}_{suffix}");
            ImageSample {
                image_path: format!("images/{id}.png"),
                mask_path: mask.then(|| format!("masks/{id}.png")),
                id,
                source_id: source_id.clone(),
                role,
                width: cfg.width as u32,
                height: cfg.height as u32,
                instruction: None,
                split,
                subset: None,
            }
        };
        out.push(SynthSample {
            record: record(Role::Authentic, "a", false),
            image: base.clone(),
            mask: None,
        });
        if out.len() == cfg.count {
            break;
        }
        let target = ((cfg.area_ratio * (cfg.width * cfg.height) as f64).round() as usize).max(1);
        let mask = plant_region(&mut rng, cfg.width, cfg.height, target);
        let edited = retexture(&mut rng, &base, &mask);
        out.push(SynthSample {
            record: record(Role::Edited, "e", true),
            image: edited,
            mask: Some(mask),
        });
    }
    Ok(out)
}

/// Writes `images/`, `masks/` and `manifest.jsonl` under `dir`.
pub fn write_dataset(dir: &Path, samples: &[SynthSample]) -> Result<DatasetManifest> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for s in samples {
        s.image.save_png(&dir.join(&s.record.image_path))?;
        if let (Some(mask), Some(rel)) = (&s.mask, &s.record.mask_path) {
            mask.save_png(&dir.join(rel))?;
        }
    }
    let records: Vec<ImageSample> = samples.iter().map(|s| s.record.clone()).collect();
    write_samples(&records, &dir.join(MANIFEST_FILE))?;
    DatasetManifest::new(dir, records)
}

pub fn synthesize(dir: &Path, cfg: &SynthConfig) -> Result<DatasetManifest> {
    write_dataset(dir, &generate(cfg)?)
}

fn quantize(v: f64) -> f64 {
    v.round().clamp(0.0, 255.0)
}

fn source_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(60.0..190.0));
    let waves: Vec<([f64; 3], f64, f64, f64)> = (0..3)
        .map(|_| {
            let amp = std::array::from_fn(|_| rng.random_range(-35.0..35.0));
            (amp, rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.0..6.3))
        })
        .collect();
    let mut img = RgbImage::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            let mut px = base;
            for (amp, fx, fy, phase) in &waves {
                let s = (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
                for c in 0..3 {
                    px[c] += amp[c] * s;
                }
            }
            img.set_pixel(x, y, px);
        }
    }
    for _ in 0..rng.random_range(2..5) {
        let colour: [f64; 3] = std::array::from_fn(|_| rng.random_range(20.0..235.0));
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let rx = rng.random_range(0.1..0.3) * w as f64;
        let ry = rng.random_range(0.1..0.3) * h as f64;
        let disc = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let inside = if disc {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    img.set_pixel(x, y, colour);
                }
            }
        }
    }
    let noise = Normal::new(0.0, 2.0).expect("valid sigma");
    for v in img.data_mut() {
        *v = quantize(*v + noise.sample(rng));
    }
    img
}

/// A contiguous region of exactly `target` pixels: a filled rectangle plus
/// a partial row along its bottom edge.
fn plant_region(rng: &mut ChaCha8Rng, w: usize, h: usize, target: usize) -> PixelMask {
    let target = target.min(w * h);
    let aspect: f64 = rng.random_range(0.5..2.0);
    let rw = ((target as f64 * aspect).sqrt().round() as usize).clamp(1, w);
    let full_rows = (target / rw).min(h);
    let rest = target - full_rows * rw;
    let rows = full_rows + usize::from(rest > 0);
    let (rw, full_rows, rest, rows) = if rows > h {
        // Too tall for the image: use the full width instead.
        let full = target / w;
        let rest = target - full * w;
        (w, full, rest, full + usize::from(rest > 0))
    } else {
        (rw, full_rows, rest, rows)
    };
    let x0 = rng.random_range(0..=w - rw);
    let y0 = rng.random_range(0..=h - rows);
    PixelMask::from_fn(w, h, |x, y| {
        if x < x0 || x >= x0 + rw || y < y0 {
            return false;
        }
        let dy = y - y0;
        dy < full_rows || (dy == full_rows && x - x0 < rest)
    })
}

fn retexture(rng: &mut ChaCha8Rng, base: &RgbImage, mask: &PixelMask) -> RgbImage {
    let (w, h) = (base.width(), base.height());
    let ox = rng.random_range(w / 4..=3 * w / 4);
    let oy = rng.random_range(h / 4..=3 * h / 4);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-25.0..25.0));
    let grain = Normal::new(0.0, 28.0).expect("valid sigma");
    let mut out = base.clone();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let src = base.pixel((x + ox) % w, (y + oy) % h);
            let px = std::array::from_fn(|c| quantize(src[c] + tint[c] + grain.sample(rng)));
            out.set_pixel(x, y, px);
        }
    }
    out
}
