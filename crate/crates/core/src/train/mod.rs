//! Training: Dice + BCE objective, AdamW, and validation-based checkpoint
//! selection.

mod loss;
mod optim;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::data::{DatasetManifest, PixelMask, RgbImage, Split};
use crate::error::{Error, Result};
use crate::eval::{binarize, confusion, metrics};
use crate::model::{logits_to_probability, Graph, Mfpt, ParamStore};

pub use loss::{
    bce_from_probs, bce_loss, dice_from_probs, dice_loss, edited_probabilities, loss_gradient,
    total_loss, LossWeights, BCE_CLAMP, DICE_SMOOTH,
};
pub use optim::AdamW;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Validate every this many iterations; 0 validates only at the end.
    pub eval_interval: usize,
    pub eval_threshold: f64,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 8,
            max_iterations: 200,
            seed: 0,
            eval_interval: 50,
            eval_threshold: 0.5,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("train.learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("train.beta1 and train.beta2 must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.adam_eps < 0.0 {
            return bad("train.weight_decay and train.adam_eps must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.eval_threshold) {
            return bad("train.eval_threshold must lie in [0, 1]");
        }
        if self.loss.lambda_dice < 0.0 || self.loss.lambda_ce < 0.0 {
            return bad("train.loss weights must be nonnegative");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW::new(
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.adam_eps,
            self.weight_decay,
        )
    }
}

/// An image and its mask at model resolution.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub image: RgbImage,
    pub mask: PixelMask,
}

/// Loads one split, resampling images bilinearly and masks by nearest
/// neighbour to `[width, height]`.
pub fn load_examples(manifest: &DatasetManifest, split: Split, size: [usize; 2]) -> Result<Vec<Example>> {
    let samples: Vec<_> = manifest.in_split(split).collect();
    samples
        .par_iter()
        .map(|s| {
            let image = RgbImage::load(&manifest.image_path(s))?;
            let mask = manifest.load_mask(s)?;
            Ok(Example {
                id: s.id.clone(),
                image: fit_image(image, size),
                mask: fit_mask(mask, size),
            })
        })
        .collect()
}

pub fn fit_image(image: RgbImage, [w, h]: [usize; 2]) -> RgbImage {
    if image.width() == w && image.height() == h {
        image
    } else {
        image.resize_bilinear(w, h)
    }
}

pub fn fit_mask(mask: PixelMask, [w, h]: [usize; 2]) -> PixelMask {
    if mask.width() == w && mask.height() == h {
        mask
    } else {
        mask.resize_nearest(w, h)
    }
}

/// Loss and per-parameter gradients for one example.
pub fn sample_gradients(
    model: &Mfpt,
    example: &Example,
    weights: LossWeights,
) -> Result<(f64, Vec<(usize, Matrix)>)> {
    let mut g = Graph::new(model.params(), true);
    let out = model.forward_graph(&mut g, &example.image)?;
    let (loss, seed) = loss_gradient(g.tape.value(out.logits), &example.mask, weights)?;
    let grads = g.tape.backward(out.logits, seed);
    Ok((loss, grads.params().map(|(i, m)| (i, m.clone())).collect()))
}

/// Mean loss and mean gradient over a batch, indexed by parameter id.
/// Samples run in parallel; the reduction follows batch order.
pub fn batch_gradients(
    model: &Mfpt,
    batch: &[&Example],
    weights: LossWeights,
) -> Result<(f64, Vec<Option<Matrix>>)> {
    let per_sample: Vec<_> = batch
        .par_iter()
        .map(|e| sample_gradients(model, e, weights))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut total = 0.0;
    let mut grads: Vec<Option<Matrix>> = vec![None; model.params().len()];
    for (loss, sample) in per_sample {
        total += loss;
        for (id, g) in sample {
            match &mut grads[id] {
                Some(acc) => *acc += &g,
                slot => *slot = Some(g),
            }
        }
    }
    for g in grads.iter_mut().flatten() {
        *g *= scale;
    }
    Ok((total * scale, grads))
}

/// Mean per-image pF1 of the model on `examples`.
pub fn mean_pf1(model: &Mfpt, examples: &[Example], threshold: f64) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let scores: Vec<f64> = examples
        .par_iter()
        .map(|e| {
            let logits = model.forward(&e.image)?;
            let prob = logits_to_probability(&logits, e.image.width(), e.image.height())?;
            let pred = binarize(&prob, threshold)?;
            Ok(metrics(&confusion(&pred, &e.mask)?).pf1)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_pf1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    /// Parameters at the best validated iteration; `None` when no
    /// iteration ran, in which case the initial parameters stand.
    pub best: Option<(usize, ParamStore)>,
}

impl TrainOutcome {
    pub fn validation_trace(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.val_pf1.map(|v| (r.iteration, v)))
            .collect()
    }

    pub fn best_iteration(&self) -> Option<usize> {
        self.best.as_ref().map(|(i, _)| *i)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

pub fn train(model: &mut Mfpt, manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(model, manifest, cfg, |_| {})
}

/// Loads the train and val splits and runs [`train_examples`].
pub fn train_with_progress(
    model: &mut Mfpt,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    progress: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome> {
    let size = model.config().input_size;
    let train_set = load_examples(manifest, Split::Train, size)?;
    let val_set = load_examples(manifest, Split::Val, size)?;
    train_examples(model, &train_set, &val_set, cfg, progress)
}

/// The training loop. Batches are drawn from a seeded reshuffle of the
/// training set each epoch; the model ends in its final state and the best
/// validated snapshot is returned alongside the per-iteration trace.
pub fn train_examples(
    model: &mut Mfpt,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = cfg.optimizer();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut records = Vec::with_capacity(cfg.max_iterations);
    let mut best: Option<(usize, f64, ParamStore)> = None;

    for iteration in 1..=cfg.max_iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train_set[order[cursor]]);
            cursor += 1;
        }
        let (loss, grads) = batch_gradients(model, &batch, cfg.loss)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { iteration, value: loss });
        }
        opt.step(model.params_mut(), &grads);

        let validate = iteration == cfg.max_iterations
            || (cfg.eval_interval > 0 && iteration % cfg.eval_interval == 0);
        let val_pf1 = if validate {
            let v = mean_pf1(model, val_set, cfg.eval_threshold)?;
            if best.as_ref().is_none_or(|(_, b, _)| v > *b) {
                best = Some((iteration, v, model.params().clone()));
            }
            Some(v)
        } else {
            None
        };
        let record = TrainRecord {
            iteration,
            train_loss: loss,
            val_pf1,
        };
        progress(&record);
        records.push(record);
    }
    Ok(TrainOutcome {
        records,
        best: best.map(|(i, _, p)| (i, p)),
    })
}

/// Iteration with the highest validation pF1, earliest on ties.
pub fn select_best_checkpoint(trace: &[(usize, f64)]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(it, v) in trace {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((it, v));
        }
    }
    best.map(|(it, _)| it)
        .ok_or_else(|| Error::InvalidArgument("empty validation trace".into()))
}

/// Writes `iteration,train_loss,val_pf1`; the last column is blank on
/// iterations without validation.
pub fn write_trace(records: &[TrainRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "iteration,train_loss,val_pf1").expect("write to Vec");
    for r in records {
        let val = r.val_pf1.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", r.iteration, r.train_loss, val).expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_checkpoint_rules() {
        assert_eq!(select_best_checkpoint(&[(100, 0.3), (200, 0.5), (300, 0.4)]).unwrap(), 200);
        assert_eq!(select_best_checkpoint(&[(100, 0.5), (200, 0.5)]).unwrap(), 100);
        assert!(select_best_checkpoint(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
