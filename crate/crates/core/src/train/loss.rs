//! Dice + binary cross-entropy on the edited-class probability.
//!
//! Logits are `2 × (H·W)`; the edited-class probability is the two-way
//! softmax `p = σ(z₁ − z₀)`.

use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::data::PixelMask;
use crate::error::{Error, Result};
use crate::model::sigmoid;

/// Additive smoothing in the Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;
/// Probabilities are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` inside the log.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_dice: f64,
    pub lambda_ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dice: 1.0,
            lambda_ce: 1.0,
        }
    }
}

fn check(logits: &Matrix, mask: &PixelMask) -> Result<()> {
    let n = mask.width() * mask.height();
    if logits.dim() != (2, n) {
        return Err(Error::shape(
            "loss",
            format!("logits {:?} for a {}x{} mask", logits.dim(), mask.width(), mask.height()),
        ));
    }
    Ok(())
}

pub fn edited_probabilities(logits: &Matrix) -> Vec<f64> {
    logits
        .row(0)
        .iter()
        .zip(logits.row(1))
        .map(|(&z0, &z1)| sigmoid(z1 - z0))
        .collect()
}

fn check_probs(p: &[f64], m: &[u8]) -> Result<()> {
    if p.len() != m.len() {
        return Err(Error::shape("loss", format!("{} probabilities for {} mask pixels", p.len(), m.len())));
    }
    Ok(())
}

/// `1 − (2·Σpm + ε) / (Σp + Σm + ε)` on soft probabilities.
pub fn dice_from_probs(p: &[f64], m: &[u8]) -> Result<f64> {
    check_probs(p, m)?;
    let (inter, sp, sm) = dice_sums(p, m);
    Ok(1.0 - (2.0 * inter + DICE_SMOOTH) / (sp + sm + DICE_SMOOTH))
}

fn dice_sums(p: &[f64], m: &[u8]) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut sm = 0.0;
    for (&p, &m) in p.iter().zip(m) {
        let m = f64::from(m);
        inter += p * m;
        sp += p;
        sm += m;
    }
    (inter, sp, sm)
}

/// Mean clamped binary cross-entropy.
pub fn bce_from_probs(p: &[f64], m: &[u8]) -> Result<f64> {
    check_probs(p, m)?;
    if p.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = p
        .iter()
        .zip(m)
        .map(|(&p, &m)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if m == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / p.len() as f64)
}

pub fn dice_loss(logits: &Matrix, mask: &PixelMask) -> Result<f64> {
    check(logits, mask)?;
    dice_from_probs(&edited_probabilities(logits), mask.values())
}

pub fn bce_loss(logits: &Matrix, mask: &PixelMask) -> Result<f64> {
    check(logits, mask)?;
    bce_from_probs(&edited_probabilities(logits), mask.values())
}

pub fn total_loss(logits: &Matrix, mask: &PixelMask, w: LossWeights) -> Result<f64> {
    Ok(w.lambda_dice * dice_loss(logits, mask)? + w.lambda_ce * bce_loss(logits, mask)?)
}

/// Loss value and its gradient with respect to the logits.
pub fn loss_gradient(logits: &Matrix, mask: &PixelMask, w: LossWeights) -> Result<(f64, Matrix)> {
    check(logits, mask)?;
    let p = edited_probabilities(logits);
    let m = mask.values();
    let n = p.len() as f64;
    let (inter, sp, sm) = dice_sums(&p, m);
    let num = 2.0 * inter + DICE_SMOOTH;
    let den = sp + sm + DICE_SMOOTH;
    let loss = w.lambda_dice * (1.0 - num / den) + w.lambda_ce * bce_from_probs(&p, m)?;

    let mut grad = Matrix::zeros(logits.dim());
    for (i, (&p, &m)) in p.iter().zip(m).enumerate() {
        let m = f64::from(m);
        let d_dice = -(2.0 * m * den - num) / (den * den);
        let d_bce = if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
            // d/dz of the unclamped term, written to avoid dividing by p(1 − p).
            (p - m) / n
        } else {
            0.0
        };
        let dz = w.lambda_dice * d_dice * p * (1.0 - p) + w.lambda_ce * d_bce;
        grad[[1, i]] = dz;
        grad[[0, i]] = -dz;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_hand_case() {
        // TP=2, FP=1, FN=1 on 16 pixels.
        let mut p = vec![0.0; 16];
        let mut m = vec![0u8; 16];
        p[0] = 1.0;
        p[1] = 1.0;
        p[2] = 1.0;
        m[0] = 1;
        m[1] = 1;
        m[3] = 1;
        assert!((dice_from_probs(&p, &m).unwrap() - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn dice_total_miss() {
        let m = vec![0u8; 64];
        let p = vec![1.0; 64];
        let d = dice_from_probs(&p, &m).unwrap();
        assert!((d - (1.0 - 1.0 / 65.0)).abs() < 1e-15);
    }

    #[test]
    fn bce_hand_case() {
        let p = [0.9, 0.1, 0.2, 0.3];
        let m = [1, 0, 0, 0];
        let expected = -(0.9f64.ln() + 0.9f64.ln() + 0.8f64.ln() + 0.7f64.ln()) / 4.0;
        assert!((bce_from_probs(&p, &m).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.197_634_9).abs() < 1e-7);
    }

    #[test]
    fn bce_half_is_ln2() {
        for m in [[0u8, 0], [1, 0], [1, 1]] {
            let v = bce_from_probs(&[0.5, 0.5], &m).unwrap();
            assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = PixelMask::new(3, 2, vec![1, 0, 0, 1, 1, 0]).unwrap();
        let logits = Matrix::from_shape_fn((2, 6), |(r, c)| (r as f64 - 0.5) * (c as f64 - 2.3) * 0.7);
        let w = LossWeights {
            lambda_dice: 1.3,
            lambda_ce: 0.6,
        };
        let (_, g) = loss_gradient(&logits, &m, w).unwrap();
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..6 {
                let mut a = logits.clone();
                a[[r, c]] += h;
                let mut b = logits.clone();
                b[[r, c]] -= h;
                let fd = (total_loss(&a, &m, w).unwrap() - total_loss(&b, &m, w).unwrap()) / (2.0 * h);
                assert!((fd - g[[r, c]]).abs() < 1e-8, "({r},{c}) {fd} vs {}", g[[r, c]]);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let m = PixelMask::zeros(2, 2);
        assert!(dice_loss(&Matrix::zeros((2, 3)), &m).is_err());
        assert!(bce_from_probs(&[0.1], &[0, 1]).is_err());
    }
}
