//! Building blocks shared by the encoder, the prompters and the decoder.

use crate::autograd::{Matrix, Tape, Var};
use crate::data::RgbImage;
use crate::error::{Error, Result};

use super::params::{Graph, Linear, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    /// Skips the nonlinearity; used to pin MLPs to exact linear maps.
    Identity,
}

/// Two-layer perceptron `fc2(act(fc1(x)))`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn apply(&self, g: &mut Graph<'_>, x: Var, act: Activation) -> Var {
        let h = self.fc1.apply(g, x);
        let h = match act {
            Activation::Gelu => g.tape.gelu(h),
            Activation::Identity => h,
        };
        self.fc2.apply(g, h)
    }
}

/// Multi-head scaled dot-product attention. `q` is `d × Lq`, `k` and `v`
/// are `d × Lk`; heads take consecutive row blocks of `d / heads` rows.
/// Returns `d × Lq`.
pub fn multi_head_attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Var {
    let (d, _) = tape.shape(q);
    assert!(heads > 0 && d % heads == 0, "attention: {d} channels over {heads} heads");
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let (a, b) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_rows(q, a, b),
                    tape.slice_rows(k, a, b),
                    tape.slice_rows(v, a, b),
                )
            };
            let qt = tape.transpose(qh);
            let scores = tape.matmul(qt, kh);
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax_rows(scores);
            let wt = tape.transpose(weights);
            tape.matmul(vh, wt)
        })
        .collect();
    tape.concat_rows(&outs)
}

/// Self-attention restricted to consecutive token windows of length
/// `group`. The tail window holds whatever tokens remain; this is the same
/// as zero-padding it and masking the padded keys.
pub fn grouped_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    group: usize,
) -> Var {
    let (_, len) = tape.shape(q);
    let mut parts = Vec::with_capacity(len.div_ceil(group));
    let mut start = 0;
    while start < len {
        let end = (start + group).min(len);
        let (qg, kg, vg) = if start == 0 && end == len {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, start, end),
                tape.slice_cols(k, start, end),
                tape.slice_cols(v, start, end),
            )
        };
        parts.push(multi_head_attention(tape, qg, kg, vg, heads));
        start = end;
    }
    tape.concat_cols(&parts)
}

/// Learned per-channel affine after column normalization.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: super::params::ParamId,
    pub bias: super::params::ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn register(store: &mut ParamStore, name: &str, channels: usize, trainable: bool) -> Self {
        let gain = store.add(format!("{name}.g"), Matrix::ones((channels, 1)), trainable);
        let bias = store.add(format!("{name}.b"), Matrix::zeros((channels, 1)), trainable);
        Self { gain, bias }
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let n = g.tape.normalize_cols(x, LAYER_NORM_EPS);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let n = g.tape.mul_column(n, gain);
        g.tape.add_column(n, bias)
    }
}

/// Non-overlapping `patch × patch` tiles of a `height × width` plane,
/// flattened row-major into the columns of a `patch² × tokens` matrix.
/// Tokens are ordered row-major over the patch grid.
pub fn plane_patches(plane: &Matrix, patch: usize) -> Result<Matrix> {
    let (h, w) = plane.dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(
            "patch_embed",
            format!("patch size {patch} does not divide {w}x{h}"),
        ));
    }
    let gw = w / patch;
    let tokens = (h / patch) * gw;
    Ok(Matrix::from_shape_fn((patch * patch, tokens), |(r, t)| {
        let (py, px) = (r / patch, r % patch);
        let (gy, gx) = (t / gw, t % gw);
        plane[[gy * patch + py, gx * patch + px]]
    }))
}

/// RGB tiles as `3·patch² × tokens`, entries ordered (row, column, channel).
pub fn rgb_patches(image: &RgbImage, patch: usize) -> Result<Matrix> {
    let (h, w) = (image.height(), image.width());
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(
            "patch_embed",
            format!("patch size {patch} does not divide {w}x{h}"),
        ));
    }
    let gw = w / patch;
    let tokens = (h / patch) * gw;
    let data = image.data();
    Ok(Matrix::from_shape_fn((3 * patch * patch, tokens), |(r, t)| {
        let (pix, c) = (r / 3, r % 3);
        let (py, px) = (pix / patch, pix % patch);
        let (gy, gx) = (t / gw, t % gw);
        data[((gy * patch + py) * w + gx * patch + px) * 3 + c]
    }))
}
