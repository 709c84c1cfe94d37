//! Dataset records, pixel grids and dataset statistics.

mod grid;
mod manifest;
mod stats;

pub use grid::{PixelMask, ProbabilityMap, RgbImage, MASK_LEVEL};
pub use manifest::{
    load_manifest, load_manifest_unverified, save_manifest, write_samples, DatasetManifest,
    ImageSample, Role, Split, SUBSET_AUTHENTIC, SUBSET_EDITED, SUBSET_FULL, SUBSET_MAGICBRUSH,
};
pub use stats::{
    area_histogram, bin_for_count, bin_for_ratio, check_split_leakage, dataset_stats,
    edited_area_ratio, ratio_histogram, DatasetStats, HistogramBin, LeakageViolation,
};
