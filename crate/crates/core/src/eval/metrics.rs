use serde::{Deserialize, Serialize};

use crate::data::{PixelMask, ProbabilityMap};
use crate::error::{Error, Result};

/// Pixel counts with edited as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    #[serde(rename = "pF1")]
    pub pf1: f64,
    #[serde(rename = "IoU")]
    pub iou: f64,
    #[serde(rename = "pACC")]
    pub pacc: f64,
}

/// `1` where `p ≥ threshold`.
pub fn binarize(prob: &ProbabilityMap, threshold: f64) -> Result<PixelMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    let values = prob.values().iter().map(|&p| u8::from(p >= threshold)).collect();
    PixelMask::new(prob.width(), prob.height(), values)
}

pub fn confusion(pred: &PixelMask, gt: &PixelMask) -> Result<ConfusionCounts> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::shape(
            "confusion",
            format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            ),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// pF1, IoU and pACC. With an empty ground truth and an empty prediction
/// both pF1 and IoU are 1; an empty ground truth with any predicted pixel
/// gives 0.
pub fn metrics(c: &ConfusionCounts) -> PixelMetrics {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let errors = tp + fp + fn_;
    let (pf1, iou) = if errors == 0.0 {
        (1.0, 1.0)
    } else {
        (2.0 * tp / (2.0 * tp + fp + fn_), tp / errors)
    };
    let total = errors + tn;
    let pacc = if total == 0.0 { 1.0 } else { (tp + tn) / total };
    PixelMetrics { pf1, iou, pacc }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_uses_greater_or_equal() {
        let p = ProbabilityMap::new(3, 1, vec![0.49, 0.5, 0.51]).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().values(), &[0, 1, 1]);
        assert_eq!(binarize(&p, 0.0).unwrap().count_edited(), 3);
        assert_eq!(binarize(&p, 1.0).unwrap().count_edited(), 0);
        assert!(binarize(&p, 1.5).is_err());
    }

    #[test]
    fn hand_fixture() {
        let gt = PixelMask::from_fn(4, 4, |x, y| matches!((y, x), (0, 0) | (0, 1) | (1, 1)));
        let pred = PixelMask::from_fn(4, 4, |x, y| matches!((y, x), (0, 0) | (0, 1) | (1, 0)));
        let c = confusion(&pred, &gt).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 12));
        let m = metrics(&c);
        assert!((m.pf1 - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.iou, 0.5);
        assert_eq!(m.pacc, 0.875);
    }

    #[test]
    fn empty_conventions() {
        let none = ConfusionCounts { tn: 16, ..Default::default() };
        let m = metrics(&none);
        assert_eq!((m.pf1, m.iou, m.pacc), (1.0, 1.0, 1.0));
        let false_alarm = ConfusionCounts { fp: 1, tn: 15, ..Default::default() };
        let m = metrics(&false_alarm);
        assert_eq!((m.pf1, m.iou), (0.0, 0.0));
    }

    #[test]
    fn complement_has_no_agreement() {
        let gt = PixelMask::from_fn(5, 3, |x, y| (x + y) % 3 == 0);
        let c = confusion(&gt.complement(), &gt).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }
}
