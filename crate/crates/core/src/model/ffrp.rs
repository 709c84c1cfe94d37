//! Feature frequency prompters.
//!
//! Two attention branches look at the refined stage features: a local one
//! restricted to consecutive token windows (high frequency) and a global
//! one whose keys and values are window-averaged tokens (low frequency).
//! Their channel-wise concatenation is compared token by token against a
//! learned filter token; the cosine score scales the stage features, which
//! are then mixed by a learned matching matrix.

use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Matrix, Tape, Var};
use crate::error::{Error, Result};

use super::config::{HeadSplit, MfptConfig};
use super::layers::{grouped_attention, multi_head_attention};
use super::params::{normal, Graph, Linear, ParamId, ParamStore};
use super::upsample::pooling_matrix;

/// Splits the columns of `x` into windows of `group` tokens, zero-padding
/// the last window to full length.
pub fn group_tokens(x: &Matrix, group: usize) -> Vec<Matrix> {
    assert!(group >= 1, "group length must be at least 1");
    let (rows, len) = x.dim();
    (0..len.div_ceil(group))
        .map(|g| {
            let mut block = Matrix::zeros((rows, group));
            let start = g * group;
            let end = (start + group).min(len);
            block
                .slice_mut(ndarray::s![.., ..end - start])
                .assign(&x.slice(ndarray::s![.., start..end]));
            block
        })
        .collect()
}

/// Concatenates windows in order and drops padding beyond `len` tokens.
pub fn ungroup_tokens(groups: &[Matrix], len: usize) -> Matrix {
    let views: Vec<_> = groups.iter().map(|g| g.view()).collect();
    let joined = ndarray::concatenate(ndarray::Axis(1), &views).expect("equal row counts");
    joined.slice(ndarray::s![.., ..len]).to_owned()
}

/// `T_match · (s ⊙ X)` with `s_l = cos(X_hl[:, l], T_filter)`.
pub fn ffrp_gate(tape: &mut Tape, mixed: Var, features: Var, filter: Var, matching: Var) -> Result<Var> {
    let (c, l) = tape.shape(features);
    if tape.shape(mixed) != (c, l) {
        return Err(Error::shape(
            "ffrp_gate",
            format!("mixed features {:?} vs stage features {:?}", tape.shape(mixed), (c, l)),
        ));
    }
    if tape.shape(filter) != (c, 1) || tape.shape(matching) != (c, c) {
        return Err(Error::shape(
            "ffrp_gate",
            format!(
                "tokens {:?}/{:?} do not match {c} channels",
                tape.shape(filter),
                tape.shape(matching)
            ),
        ));
    }
    let score = tape.cosine_cols(mixed, filter);
    let scaled = tape.mul_row(features, score);
    Ok(tape.matmul(matching, scaled))
}

#[derive(Clone, Copy, Debug)]
pub struct Projections {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

#[derive(Clone, Debug)]
pub struct FfrpStage {
    pub block: usize,
    pub high: Projections,
    pub low: Option<Projections>,
    /// `Ĉ × 1`.
    pub filter_token: ParamId,
    /// `Ĉ × Ĉ`.
    pub matching_token: ParamId,
    pub split: HeadSplit,
    pub group: usize,
    pool: Arc<Matrix>,
}

fn projections(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
    out: usize,
    inp: usize,
) -> Projections {
    let std = 1.0 / (inp as f64).sqrt();
    let mut lin = |part: &str, rng: &mut _| {
        Linear::register(store, &format!("{name}.{part}"), normal(rng, out, inp, std), true)
    };
    Projections {
        q: lin("q", rng),
        k: lin("k", rng),
        v: lin("v", rng),
    }
}

impl FfrpStage {
    pub fn register(
        store: &mut ParamStore,
        cfg: &MfptConfig,
        block: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let split = cfg.head_split()?;
        let c = cfg.backbone_channels;
        let base = format!("ffrp.stage{block}");
        let high = projections(store, rng, &format!("{base}.high"), split.channels_high, c);
        let low = (split.heads_low > 0)
            .then(|| projections(store, rng, &format!("{base}.low"), split.channels_low, c));
        let filter_token = store.add(
            format!("{base}.filter_token"),
            Matrix::from_elem((c, 1), 1.0 / (c as f64).sqrt()),
            true,
        );
        let matching_token = store.add(format!("{base}.matching_token"), Matrix::eye(c), true);
        Ok(Self {
            block,
            high,
            low,
            filter_token,
            matching_token,
            split,
            group: cfg.group_length,
            pool: Arc::new(pooling_matrix(cfg.token_count(), cfg.group_length)),
        })
    }

    /// Windowed self-attention, `Ĉ_high × L`.
    pub fn high_branch(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let q = self.high.q.apply(g, x);
        let k = self.high.k.apply(g, x);
        let v = self.high.v.apply(g, x);
        grouped_attention(&mut g.tape, q, k, v, self.split.heads_high, self.group)
    }

    /// Attention from every token to the window averages, `Ĉ_low × L`;
    /// `None` when the split gives the low branch no heads.
    pub fn low_branch(&self, g: &mut Graph<'_>, x: Var) -> Option<Var> {
        let low = self.low?;
        let len = g.tape.shape(x).1;
        let pooled = if self.pool.nrows() == len {
            g.tape.matmul_const(x, self.pool.clone())
        } else {
            g.tape
                .matmul_const(x, Arc::new(pooling_matrix(len, self.group)))
        };
        let q = low.q.apply(g, x);
        let k = low.k.apply(g, pooled);
        let v = low.v.apply(g, pooled);
        Some(multi_head_attention(&mut g.tape, q, k, v, self.split.heads_low))
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let high = self.high_branch(g, x);
        let mixed = match self.low_branch(g, x) {
            Some(low) => g.tape.concat_rows(&[high, low]),
            None => high,
        };
        let filter = g.param(self.filter_token);
        let matching = g.param(self.matching_token);
        ffrp_gate(&mut g.tape, mixed, x, filter, matching)
    }
}
