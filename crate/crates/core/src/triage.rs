//! Rule-based label triage over change-detection probability maps.
//!
//! Each edited sample's map is binarized at the labeling threshold. The
//! mean probability over the labeled pixels routes the sample to accept,
//! review or discard, and the labeled area removes degenerate edits that
//! cover (almost) everything or (almost) nothing.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    edited_area_ratio, write_samples, DatasetManifest, ImageSample, PixelMask, ProbabilityMap, Role,
};
use crate::error::{Error, Result};
use crate::eval::binarize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriagePolicy {
    pub accept_above: f64,
    pub review_low: f64,
    pub label_threshold: f64,
    pub area_min: f64,
    pub area_max: f64,
}

impl Default for TriagePolicy {
    fn default() -> Self {
        Self {
            accept_above: 0.5,
            review_low: 0.3,
            label_threshold: 0.1,
            area_min: 0.01,
            area_max: 0.99,
        }
    }
}

impl TriagePolicy {
    pub fn validate(&self) -> Result<()> {
        let p = self;
        if !(0.0 <= p.review_low && p.review_low <= p.accept_above && p.accept_above <= 1.0) {
            return Err(Error::Config(format!(
                "triage thresholds need 0 <= review_low ({}) <= accept_above ({}) <= 1",
                p.review_low, p.accept_above
            )));
        }
        if !(0.0 < p.area_min && p.area_min < p.area_max && p.area_max < 1.0) {
            return Err(Error::Config(format!(
                "triage area bounds need 0 < area_min ({}) < area_max ({}) < 1",
                p.area_min, p.area_max
            )));
        }
        if !(p.label_threshold > 0.0 && p.label_threshold < 1.0) {
            return Err(Error::Config(format!(
                "triage.label_threshold {} outside (0, 1)",
                p.label_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Review,
    Discard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    None,
    UncontrolledGeneration,
    NoChange,
}

impl FailureClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::UncontrolledGeneration => "uncontrolled_generation",
            Self::NoChange => "no_change",
        }
    }
}

impl fmt::Display for FailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Accept above `accept_above`, review on `[review_low, accept_above]`,
/// discard below `review_low`.
pub fn triage_decide(mean_prob: f64, policy: &TriagePolicy) -> Result<Decision> {
    if !(0.0..=1.0).contains(&mean_prob) {
        return Err(Error::InvalidArgument(format!("mean probability {mean_prob} outside [0, 1]")));
    }
    Ok(if mean_prob > policy.accept_above {
        Decision::Accept
    } else if mean_prob >= policy.review_low {
        Decision::Review
    } else {
        Decision::Discard
    })
}

/// Binarizes at the labeling threshold (`p ≥ label_threshold`).
pub fn finalize_label(prob: &ProbabilityMap, policy: &TriagePolicy) -> PixelMask {
    binarize(prob, policy.label_threshold).expect("label threshold validated to lie in (0, 1)")
}

/// `(keep, failure class)` from the labeled area fraction.
pub fn area_gate(mask: &PixelMask, policy: &TriagePolicy) -> (bool, FailureClass) {
    area_gate_ratio(edited_area_ratio(mask), policy)
}

pub fn area_gate_ratio(ratio: f64, policy: &TriagePolicy) -> (bool, FailureClass) {
    if ratio >= policy.area_max {
        (false, FailureClass::UncontrolledGeneration)
    } else if ratio <= policy.area_min {
        (false, FailureClass::NoChange)
    } else {
        (true, FailureClass::None)
    }
}

/// Mean probability over pixels at or above the labeling threshold; 0 when
/// no pixel qualifies.
pub fn labeled_mean_probability(prob: &ProbabilityMap, policy: &TriagePolicy) -> f64 {
    let (sum, n) = prob
        .values()
        .iter()
        .filter(|&&p| p >= policy.label_threshold)
        .fold((0.0, 0usize), |(s, n), &p| (s + p, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriageDecision {
    pub id: String,
    pub mean_prob: f64,
    /// Routing by mean probability alone.
    pub decision: Decision,
    pub area_ratio: f64,
    pub failure_class: FailureClass,
}

impl TriageDecision {
    /// Whether the area gate let the sample through.
    pub fn kept(&self) -> bool {
        self.failure_class == FailureClass::None
    }

    /// Where the sample ends up: area-gated samples are discarded whatever
    /// their mean probability.
    pub fn outcome(&self) -> Decision {
        if self.kept() {
            self.decision
        } else {
            Decision::Discard
        }
    }
}

/// Decision and final label for one map.
pub fn assess(id: &str, prob: &ProbabilityMap, policy: &TriagePolicy) -> Result<(TriageDecision, PixelMask)> {
    let label = finalize_label(prob, policy);
    let area_ratio = edited_area_ratio(&label);
    let mean_prob = labeled_mean_probability(prob, policy);
    let decision = triage_decide(mean_prob, policy)?;
    let (_, failure_class) = area_gate_ratio(area_ratio, policy);
    Ok((
        TriageDecision {
            id: id.to_owned(),
            mean_prob,
            decision,
            area_ratio,
            failure_class,
        },
        label,
    ))
}

/// Looks for `<id>.png`, then `<id>.f32`.
pub fn find_probability_map(dir: &Path, id: &str) -> Option<PathBuf> {
    ["png", "f32"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriageOutput {
    /// One entry per edited sample, sorted by id.
    pub decisions: Vec<TriageDecision>,
}

impl TriageOutput {
    pub fn count(&self, outcome: Decision) -> usize {
        self.decisions.iter().filter(|d| d.outcome() == outcome).count()
    }
}

pub const ACCEPT_MANIFEST: &str = "accept.jsonl";
pub const REVIEW_MANIFEST: &str = "review.jsonl";
pub const DISCARD_REPORT: &str = "discard.csv";
pub const MASK_DIR: &str = "masks";

/// Triage every edited sample of `manifest` from the maps in `prob_dir`
/// and write the outputs to `out_dir`:
///
/// * `accept.jsonl`: accepted samples, `mask_path` pointing at the final label;
/// * `review.jsonl`: samples for manual checking, with the draft label;
/// * `discard.csv`: `id,mean_prob,area_ratio,failure_class`;
/// * `masks/<id>.png`: labels of accepted and review samples.
///
/// Image paths in the written manifests are resolved against the input
/// manifest's root. Authentic samples carry no edit and are skipped.
pub fn run_triage(
    prob_dir: &Path,
    manifest: &DatasetManifest,
    policy: &TriagePolicy,
    out_dir: &Path,
) -> Result<TriageOutput> {
    policy.validate()?;
    let mut edited: Vec<&ImageSample> =
        manifest.samples().iter().filter(|s| s.role == Role::Edited).collect();
    edited.sort_by(|a, b| a.id.cmp(&b.id));

    let assessed = edited
        .par_iter()
        .map(|s| {
            let path = find_probability_map(prob_dir, &s.id).ok_or_else(|| Error::MissingFile {
                id: s.id.clone(),
                path: prob_dir.join(format!("{}.png", s.id)),
            })?;
            let prob = ProbabilityMap::load(&path)?;
            if (prob.width(), prob.height()) != (s.width as usize, s.height as usize) {
                return Err(Error::DimensionMismatch {
                    id: s.id.clone(),
                    what: "probability map",
                    expected_w: s.width,
                    expected_h: s.height,
                    found_w: prob.width() as u32,
                    found_h: prob.height() as u32,
                });
            }
            assess(&s.id, &prob, policy)
        })
        .collect::<Result<Vec<_>>>()?;

    let mask_dir = out_dir.join(MASK_DIR);
    std::fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
    let mut accept = Vec::new();
    let mut review = Vec::new();
    let mut discard = csv::Writer::from_writer(Vec::new());
    discard.write_record(["id", "mean_prob", "area_ratio", "failure_class"])?;
    for (sample, (decision, label)) in edited.iter().zip(&assessed) {
        let outcome = decision.outcome();
        if outcome == Decision::Discard {
            discard.write_record([
                decision.id.clone(),
                decision.mean_prob.to_string(),
                decision.area_ratio.to_string(),
                decision.failure_class.to_string(),
            ])?;
            continue;
        }
        let rel = format!("{MASK_DIR}/{}.png", sample.id);
        label.save_png(&out_dir.join(&rel))?;
        let record = ImageSample {
            image_path: manifest.image_path(sample).to_string_lossy().into_owned(),
            mask_path: Some(rel),
            ..(*sample).clone()
        };
        match outcome {
            Decision::Accept => accept.push(record),
            _ => review.push(record),
        }
    }
    write_samples(&accept, &out_dir.join(ACCEPT_MANIFEST))?;
    write_samples(&review, &out_dir.join(REVIEW_MANIFEST))?;
    let bytes = discard
        .into_inner()
        .map_err(|e| Error::Config(format!("discard report: {e}")))?;
    let path = out_dir.join(DISCARD_REPORT);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;

    Ok(TriageOutput {
        decisions: assessed.into_iter().map(|(d, _)| d).collect(),
    })
}
