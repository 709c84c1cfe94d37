//! Split-leakage checks and edited-area statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::grid::PixelMask;
use super::manifest::{DatasetManifest, Role, Split};
use crate::error::Result;

/// A source image whose samples were spread over more than one split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LeakageViolation {
    pub source_id: String,
    pub splits: Vec<Split>,
}

/// Reports every `source_id` whose samples land in more than one of
/// train/val/test. `Unassigned` samples are ignored. Output is sorted by
/// source id.
pub fn check_split_leakage(manifest: &DatasetManifest) -> Vec<LeakageViolation> {
    let mut by_source: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    for s in manifest.samples() {
        if s.split == Split::Unassigned {
            continue;
        }
        by_source.entry(s.source_id.as_str()).or_default().insert(s.split);
    }
    by_source
        .into_iter()
        .filter(|(_, splits)| splits.len() > 1)
        .map(|(source_id, splits)| LeakageViolation {
            source_id: source_id.to_owned(),
            splits: splits.into_iter().collect(),
        })
        .collect()
}

/// Fraction of mask pixels marked edited.
pub fn edited_area_ratio(mask: &PixelMask) -> f64 {
    let total = mask.width() * mask.height();
    if total == 0 {
        return 0.0;
    }
    mask.count_edited() as f64 / total as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Bin index for `edited / total` among `bins` uniform bins over `[0, 1]`,
/// right-open except the last. Integer arithmetic keeps boundaries exact.
pub fn bin_for_count(edited: usize, total: usize, bins: usize) -> usize {
    debug_assert!(bins > 0 && total > 0 && edited <= total);
    ((edited * bins) / total).min(bins - 1)
}

/// Same rule for a real-valued ratio.
pub fn bin_for_ratio(ratio: f64, bins: usize) -> usize {
    ((ratio * bins as f64).floor() as usize).min(bins - 1)
}

fn empty_bins(bins: usize) -> Vec<HistogramBin> {
    (0..bins)
        .map(|i| HistogramBin {
            lo: i as f64 / bins as f64,
            hi: (i + 1) as f64 / bins as f64,
            count: 0,
        })
        .collect()
}

/// Histogram of edited-area ratios over the edited samples of a manifest.
///
/// # Panics
/// If `bins` is zero.
pub fn area_histogram(manifest: &DatasetManifest, bins: usize) -> Result<Vec<HistogramBin>> {
    assert!(bins > 0, "bin count must be positive");
    let mut hist = empty_bins(bins);
    for s in manifest.samples().iter().filter(|s| s.role == Role::Edited) {
        let mask = manifest.load_mask(s)?;
        let total = mask.width() * mask.height();
        hist[bin_for_count(mask.count_edited(), total, bins)].count += 1;
    }
    Ok(hist)
}

/// Histogram over precomputed ratios.
pub fn ratio_histogram(ratios: &[f64], bins: usize) -> Vec<HistogramBin> {
    assert!(bins > 0, "bin count must be positive");
    let mut hist = empty_bins(bins);
    for &r in ratios {
        hist[bin_for_ratio(r, bins)].count += 1;
    }
    hist
}

/// Record counts of a manifest plus, optionally, its edited-area histogram.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n: usize,
    pub splits: BTreeMap<Split, usize>,
    pub roles: BTreeMap<Role, usize>,
    pub split_roles: BTreeMap<Split, BTreeMap<Role, usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub area_histogram: Option<Vec<HistogramBin>>,
}

/// Counts records per split and role. The histogram reads every mask and is
/// skipped when `bins` is `None`.
pub fn dataset_stats(manifest: &DatasetManifest, bins: Option<usize>) -> Result<DatasetStats> {
    let mut stats = DatasetStats {
        n: manifest.len(),
        splits: BTreeMap::new(),
        roles: BTreeMap::new(),
        split_roles: BTreeMap::new(),
        area_histogram: None,
    };
    for s in manifest.samples() {
        *stats.splits.entry(s.split).or_default() += 1;
        *stats.roles.entry(s.role).or_default() += 1;
        *stats.split_roles.entry(s.split).or_default().entry(s.role).or_default() += 1;
    }
    if let Some(bins) = bins {
        stats.area_histogram = Some(area_histogram(manifest, bins)?);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_edge_cases() {
        assert_eq!(edited_area_ratio(&PixelMask::zeros(8, 8)), 0.0);
        assert_eq!(edited_area_ratio(&PixelMask::zeros(8, 8).complement()), 1.0);
        let mut n = 0;
        let m = PixelMask::from_fn(4, 4, |_, _| {
            n += 1;
            n <= 3
        });
        assert_eq!(edited_area_ratio(&m), 0.1875);
    }

    #[test]
    fn ratio_histogram_counts() {
        let h = ratio_histogram(&[0.05, 0.07, 0.50], 10);
        let counts: Vec<_> = h.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![2, 0, 0, 0, 0, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn last_bin_is_closed() {
        assert_eq!(bin_for_count(64, 64, 10), 9);
        assert_eq!(bin_for_ratio(1.0, 4), 3);
        assert_eq!(bin_for_count(16, 64, 4), 1);
    }
}
