//! Lightweight multi-scale pixel decoder.
//!
//! Each tap is projected to the decoder width, the projections are summed on
//! the patch grid, mixed by two 3×3 convolutions, mapped to two class logits
//! and bilinearly upsampled to the input resolution.

use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Matrix, Var};
use crate::error::{Error, Result};

use super::config::MfptConfig;
use super::params::{normal, Graph, Linear, ParamStore};
use super::upsample::bilinear_matrix;

#[derive(Clone, Debug)]
pub struct PixelDecoder {
    pub laterals: Vec<Linear>,
    pub mix1: Linear,
    pub mix2: Linear,
    pub head: Linear,
    grid: (usize, usize),
    upsample: Arc<Matrix>,
}

impl PixelDecoder {
    pub fn register(store: &mut ParamStore, cfg: &MfptConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.decoder_channels;
        let c = cfg.backbone_channels;
        let laterals = cfg
            .tap_stages
            .iter()
            .map(|n| {
                Linear::register(
                    store,
                    &format!("decoder.lateral{n}"),
                    normal(rng, d, c, 1.0 / (c as f64).sqrt()),
                    true,
                )
            })
            .collect();
        let conv_std = 1.0 / ((9 * d) as f64).sqrt();
        let mix1 = Linear::register(store, "decoder.mix1", normal(rng, d, 9 * d, conv_std), true);
        let mix2 = Linear::register(store, "decoder.mix2", normal(rng, d, 9 * d, conv_std), true);
        let head = Linear::register(
            store,
            "decoder.head",
            normal(rng, 2, d, 1.0 / (d as f64).sqrt()),
            true,
        );
        let grid = cfg.grid();
        let upsample = Arc::new(bilinear_matrix(grid.0, grid.1, cfg.height(), cfg.width()));
        Self {
            laterals,
            mix1,
            mix2,
            head,
            grid,
            upsample,
        }
    }

    fn conv3x3(&self, g: &mut Graph<'_>, layer: &Linear, x: Var) -> Var {
        let cols = g.tape.im2col_3x3(x, self.grid.0, self.grid.1);
        let y = layer.apply(g, cols);
        g.tape.gelu(y)
    }

    /// `2 × (H·W)` logits, row-major pixels; row 1 is the edited class.
    pub fn forward(&self, g: &mut Graph<'_>, taps: &[Var]) -> Result<Var> {
        if taps.len() != self.laterals.len() {
            return Err(Error::shape(
                "decoder",
                format!("{} taps for {} lateral projections", taps.len(), self.laterals.len()),
            ));
        }
        let mut sum: Option<Var> = None;
        for (lat, &tap) in self.laterals.iter().zip(taps) {
            let p = lat.apply(g, tap);
            sum = Some(match sum {
                Some(s) => g.tape.add(s, p),
                None => p,
            });
        }
        let x = sum.expect("at least one tap");
        let x = self.conv3x3(g, &self.mix1, x);
        let x = self.conv3x3(g, &self.mix2, x);
        let z = self.head.apply(g, x);
        Ok(g.tape.matmul_const(z, self.upsample.clone()))
    }
}
