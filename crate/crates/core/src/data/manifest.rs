//! Line-delimited JSON dataset manifests.
//!
//! One sample per line:
//!
//! ```text
//! {"id":"e0001","source_id":"s0000","role":"edited","width":64,"height":64,
//!  "image_path":"images/e0001.png","mask_path":"masks/e0001.png",
//!  "instruction":"...","split":"train","subset":"DEAL-E"}
//! ```
//!
//! Paths are relative to the directory holding the manifest file.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::PixelMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Authentic,
    Edited,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Authentic => "authentic",
            Role::Edited => "edited",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Subset labels used by the published benchmark; any other string is a
/// custom label.
pub const SUBSET_AUTHENTIC: &str = "DEAL-A";
pub const SUBSET_EDITED: &str = "DEAL-E";
pub const SUBSET_FULL: &str = "DEAL-Full";
pub const SUBSET_MAGICBRUSH: &str = "DEAL-MB";

/// One manifest record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSample {
    pub id: String,
    pub source_id: String,
    pub role: Role,
    pub width: u32,
    pub height: u32,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
}

impl ImageSample {
    fn check_shape(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidRecord {
                id: self.id.clone(),
                reason: "width and height must be positive".into(),
            });
        }
        if self.role == Role::Edited && self.mask_path.is_none() {
            return Err(Error::InvalidRecord {
                id: self.id.clone(),
                reason: "edited sample without mask_path".into(),
            });
        }
        Ok(())
    }
}

/// An ordered, immutable collection of samples rooted at a directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    root: PathBuf,
    samples: Vec<ImageSample>,
}

impl DatasetManifest {
    /// Builds a manifest in memory; ids must be unique.
    pub fn new(root: impl Into<PathBuf>, samples: Vec<ImageSample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            s.check_shape()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self {
            root: root.into(),
            samples,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn subset_of(&self, id: &str) -> Option<&str> {
        self.get(id).and_then(|s| s.subset.as_deref())
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ImageSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn image_path(&self, sample: &ImageSample) -> PathBuf {
        self.resolve(&sample.image_path)
    }

    /// Ground truth for a sample; authentic samples get an all-zero mask.
    pub fn load_mask(&self, sample: &ImageSample) -> Result<PixelMask> {
        match (&sample.role, &sample.mask_path) {
            (Role::Edited, Some(rel)) => {
                let path = self.resolve(rel);
                if !path.exists() {
                    return Err(Error::MissingFile {
                        id: sample.id.clone(),
                        path,
                    });
                }
                PixelMask::load_png(&path)
            }
            (Role::Edited, None) => Err(Error::InvalidRecord {
                id: sample.id.clone(),
                reason: "edited sample without mask_path".into(),
            }),
            (Role::Authentic, _) => Ok(PixelMask::zeros(
                sample.width as usize,
                sample.height as usize,
            )),
        }
    }

    /// Copy with a different sample list, keeping the root.
    pub fn with_samples(&self, samples: Vec<ImageSample>) -> Result<Self> {
        Self::new(self.root.clone(), samples)
    }
}

/// Loads and fully validates a manifest: every referenced file must exist
/// and masks must match their image's dimensions.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let manifest = load_manifest_unverified(path)?;
    for s in manifest.samples() {
        verify_files(&manifest, s)?;
    }
    Ok(manifest)
}

/// Parses a manifest without touching the referenced files.
pub fn load_manifest_unverified(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: ImageSample = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        sample.check_shape()?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    Ok(DatasetManifest { root, samples })
}

fn verify_files(manifest: &DatasetManifest, s: &ImageSample) -> Result<()> {
    let (w, h) = (s.width, s.height);
    let image_path = manifest.resolve(&s.image_path);
    let (iw, ih) = dimensions(s, &image_path)?;
    if (iw, ih) != (w, h) {
        return Err(Error::DimensionMismatch {
            id: s.id.clone(),
            what: "image",
            expected_w: w,
            expected_h: h,
            found_w: iw,
            found_h: ih,
        });
    }
    if let Some(rel) = &s.mask_path {
        let mask_path = manifest.resolve(rel);
        let (mw, mh) = dimensions(s, &mask_path)?;
        if (mw, mh) != (iw, ih) {
            return Err(Error::DimensionMismatch {
                id: s.id.clone(),
                what: "mask",
                expected_w: iw,
                expected_h: ih,
                found_w: mw,
                found_h: mh,
            });
        }
    }
    Ok(())
}

fn dimensions(s: &ImageSample, path: &Path) -> Result<(u32, u32)> {
    if !path.exists() {
        return Err(Error::MissingFile {
            id: s.id.clone(),
            path: path.to_path_buf(),
        });
    }
    image::image_dimensions(path).map_err(|e| Error::image(path, e))
}

/// Writes one compact JSON object per line, in manifest order.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    write_samples(manifest.samples(), path)
}

pub fn write_samples(samples: &[ImageSample], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
