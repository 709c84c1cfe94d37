//! Frozen pre-norm vision transformer encoder.
//!
//! Weights are drawn once from `backbone_seed` and never trained. Real
//! encoder weights can be swapped in through the checkpoint import path as
//! long as names and shapes match.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Matrix, Var};
use crate::data::RgbImage;
use crate::error::Result;

use super::config::MfptConfig;
use super::layers::{multi_head_attention, rgb_patches, LayerNorm, Mlp};
use super::params::{normal, Graph, Linear, ParamId, ParamStore};

pub const BACKBONE_PREFIX: &str = "backbone.";

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    heads: usize,
}

impl EncoderBlock {
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let a = self.norm1.apply(g, x);
        let q = self.q.apply(g, a);
        let k = self.k.apply(g, a);
        let v = self.v.apply(g, a);
        let att = multi_head_attention(&mut g.tape, q, k, v, self.heads);
        let att = self.out.apply(g, att);
        let x = g.tape.add(x, att);
        let m = self.norm2.apply(g, x);
        let m = self.mlp.apply(g, m, super::layers::Activation::Gelu);
        g.tape.add(x, m)
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub patch_embed: Linear,
    pub position: ParamId,
    pub blocks: Vec<EncoderBlock>,
    patch_size: usize,
}

impl Backbone {
    pub fn register(store: &mut ParamStore, cfg: &MfptConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.backbone_seed);
        let c = cfg.backbone_channels;
        let pin = 3 * cfg.patch_size * cfg.patch_size;
        let hidden = c * cfg.backbone_mlp_ratio;
        let scaled = |rng: &mut ChaCha8Rng, out: usize, inp: usize, gain: f64| {
            normal(rng, out, inp, gain / (inp as f64).sqrt())
        };

        let patch_embed = Linear::register(
            store,
            "backbone.patch_embed",
            scaled(&mut rng, c, pin, 1.0),
            false,
        );
        let position = store.add(
            "backbone.pos",
            normal(&mut rng, c, cfg.token_count(), 0.5),
            false,
        );
        let blocks = (1..=cfg.n_blocks)
            .map(|n| {
                let name = |part: &str| format!("backbone.block{n}.{part}");
                EncoderBlock {
                    norm1: LayerNorm::register(store, &name("ln1"), c, false),
                    q: Linear::register(store, &name("attn.q"), scaled(&mut rng, c, c, 1.0), false),
                    k: Linear::register(store, &name("attn.k"), scaled(&mut rng, c, c, 1.0), false),
                    v: Linear::register(store, &name("attn.v"), scaled(&mut rng, c, c, 1.0), false),
                    out: Linear::register(store, &name("attn.o"), scaled(&mut rng, c, c, 0.5), false),
                    norm2: LayerNorm::register(store, &name("ln2"), c, false),
                    mlp: Mlp {
                        fc1: Linear::register(
                            store,
                            &name("mlp.fc1"),
                            scaled(&mut rng, hidden, c, 1.0),
                            false,
                        ),
                        fc2: Linear::register(
                            store,
                            &name("mlp.fc2"),
                            scaled(&mut rng, c, hidden, 0.5),
                            false,
                        ),
                    },
                    heads: cfg.backbone_heads,
                }
            })
            .collect();
        Self {
            patch_embed,
            position,
            blocks,
            patch_size: cfg.patch_size,
        }
    }

    /// Normalized RGB patches, `3·P² × L`.
    pub fn image_patches(&self, image: &RgbImage) -> Result<Matrix> {
        let mut p = rgb_patches(image, self.patch_size)?;
        p.mapv_inplace(|v| (v / 255.0 - 0.5) / 0.25);
        Ok(p)
    }

    /// Token features before the first block.
    pub fn embed(&self, g: &mut Graph<'_>, patches: Matrix) -> Var {
        let x = g.tape.constant(patches);
        let x = self.patch_embed.apply(g, x);
        let pos = g.param(self.position);
        g.tape.add(x, pos)
    }

    /// Block `n`, 1-based.
    pub fn block(&self, g: &mut Graph<'_>, n: usize, x: Var) -> Var {
        self.blocks[n - 1].forward(g, x)
    }
}
