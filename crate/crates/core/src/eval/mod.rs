//! Pixel-level metrics, subset evaluation and the degradation harness.

mod degrade;
mod metrics;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    DatasetManifest, ImageSample, PixelMask, ProbabilityMap, RgbImage, Role, SUBSET_AUTHENTIC,
    SUBSET_EDITED, SUBSET_FULL,
};
use crate::error::{Error, Result};
use crate::model::Mfpt;
use crate::train::fit_image;

pub use degrade::{
    blur_sigma, degrade, gaussian_blur, gaussian_kernel, jpeg_bytes, DegradationKind,
    DegradationSpec,
};
pub use metrics::{binarize, confusion, metrics, ConfusionCounts, PixelMetrics};

/// Default binarization threshold for evaluation.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Samples belonging to a named subset. `DEAL-A` selects authentic
/// samples, `DEAL-E` edited ones, `DEAL-Full` and `all` everything; any
/// other name matches the samples' own `subset` label.
pub fn select_subset<'m>(manifest: &'m DatasetManifest, subset: &str) -> Vec<&'m ImageSample> {
    manifest
        .samples()
        .iter()
        .filter(|s| match subset {
            SUBSET_AUTHENTIC => s.role == Role::Authentic,
            SUBSET_EDITED => s.role == Role::Edited,
            SUBSET_FULL | "all" => true,
            name => s.subset.as_deref() == Some(name),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub id: String,
    #[serde(flatten)]
    pub metrics: PixelMetrics,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subset: String,
    pub threshold: f64,
    pub n: usize,
    #[serde(rename = "pF1", default, skip_serializing_if = "Option::is_none")]
    pub pf1: Option<f64>,
    #[serde(rename = "IoU", default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(rename = "pACC", default, skip_serializing_if = "Option::is_none")]
    pub pacc: Option<f64>,
    pub per_image: Vec<ImageEval>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    /// Aggregates per-image results. Authentic-only subsets report pACC
    /// alone; others report pF1, IoU and pACC.
    pub fn aggregate(subset: &str, threshold: f64, per_image: Vec<ImageEval>, authentic_only: bool) -> Self {
        let pacc = mean(per_image.iter().map(|e| e.metrics.pacc));
        let (pf1, iou) = if authentic_only {
            (None, None)
        } else {
            (
                mean(per_image.iter().map(|e| e.metrics.pf1)),
                mean(per_image.iter().map(|e| e.metrics.iou)),
            )
        };
        Self {
            subset: subset.to_owned(),
            threshold,
            n: per_image.len(),
            pf1,
            iou,
            pacc,
            per_image,
        }
    }

    /// Mean per-image pF1 and IoU, regardless of subset policy.
    pub fn mean_pf1_iou(&self) -> (f64, f64) {
        (
            mean(self.per_image.iter().map(|e| e.metrics.pf1)).unwrap_or(0.0),
            mean(self.per_image.iter().map(|e| e.metrics.iou)).unwrap_or(0.0),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn evaluate_image(id: &str, prob: &ProbabilityMap, gt: &PixelMask, threshold: f64) -> Result<ImageEval> {
    let pred = binarize(prob, threshold)?;
    let counts = confusion(&pred, gt).map_err(|e| match e {
        Error::Shape { detail, .. } => Error::shape("evaluate", format!("{id}: {detail}")),
        other => other,
    })?;
    Ok(ImageEval {
        id: id.to_owned(),
        metrics: metrics(&counts),
        counts,
    })
}

/// Per-image metrics for every sample of `subset`, in manifest order.
pub fn evaluate_subset(
    predictions: &BTreeMap<String, ProbabilityMap>,
    manifest: &DatasetManifest,
    subset: &str,
    threshold: f64,
) -> Result<EvalReport> {
    let samples = select_subset(manifest, subset);
    if let Some(s) = samples.iter().find(|s| !predictions.contains_key(&s.id)) {
        return Err(Error::MissingPrediction(s.id.clone()));
    }
    let per_image = samples
        .par_iter()
        .map(|s| {
            let gt = manifest.load_mask(s)?;
            evaluate_image(&s.id, &predictions[&s.id], &gt, threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    let authentic_only = subset == SUBSET_AUTHENTIC
        || (!samples.is_empty() && samples.iter().all(|s| s.role == Role::Authentic));
    Ok(EvalReport::aggregate(subset, threshold, per_image, authentic_only))
}

/// Runs the model on one image at its native size: the optional
/// degradation is applied first, the result is resampled to the model's
/// input size, and the probability map is resampled back.
pub fn predict_image(model: &Mfpt, image: &RgbImage, degradation: Option<(DegradationKind, u32)>) -> Result<ProbabilityMap> {
    let image = match degradation {
        Some((kind, level)) => degrade(image, kind, level)?,
        None => image.clone(),
    };
    let (w, h) = (image.width(), image.height());
    let prob = model.predict(&fit_image(image, model.config().input_size))?;
    Ok(prob.resize_bilinear(w, h))
}

pub fn predict_samples(
    model: &Mfpt,
    manifest: &DatasetManifest,
    samples: &[&ImageSample],
    degradation: Option<(DegradationKind, u32)>,
) -> Result<BTreeMap<String, ProbabilityMap>> {
    samples
        .par_iter()
        .map(|s| {
            let image = RgbImage::load(&manifest.image_path(s))?;
            Ok((s.id.clone(), predict_image(model, &image, degradation)?))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub level: u32,
    #[serde(rename = "IoU")]
    pub iou: f64,
    #[serde(rename = "pF1")]
    pub pf1: f64,
}

/// One row per level, in the given order. Masks are never degraded.
pub fn robustness_sweep(
    model: &Mfpt,
    manifest: &DatasetManifest,
    spec: &DegradationSpec,
    subset: &str,
    threshold: f64,
) -> Result<Vec<RobustnessRow>> {
    let samples = select_subset(manifest, subset);
    spec.levels
        .iter()
        .map(|&level| {
            let preds = predict_samples(model, manifest, &samples, Some((spec.kind, level)))?;
            let report = evaluate_subset(&preds, manifest, subset, threshold)?;
            let (pf1, iou) = report.mean_pf1_iou();
            Ok(RobustnessRow { level, iou, pf1 })
        })
        .collect()
}

pub fn robustness_csv(rows: &[RobustnessRow]) -> String {
    let mut out = Vec::new();
    writeln!(out, "level,IoU,pF1").expect("write to Vec");
    for r in rows {
        writeln!(out, "{},{},{}", r.level, r.iou, r.pf1).expect("write to Vec");
    }
    String::from_utf8(out).expect("ascii")
}

pub fn write_robustness_csv(rows: &[RobustnessRow], path: &Path) -> Result<()> {
    std::fs::write(path, robustness_csv(rows)).map_err(|e| Error::io(path, e))
}
