//! The multi-frequency prompt tuning network around a frozen encoder.
//!
//! Data flow for one image:
//!
//! 1. RGB patches are embedded by the frozen encoder stem.
//! 2. For each block `n`: at a tap stage the frequency input prompter
//!    rewrites the block input from the high-pass prompt image and the
//!    previous refined features; the frozen block runs; the block's adapter
//!    refines its output.
//! 3. At tap stages the refined features additionally pass the feature
//!    frequency prompter and go to the decoder.
//! 4. The decoder returns `2 × (H·W)` logits.

pub mod adapter;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod ffrp;
pub mod finp;
pub mod layers;
pub mod params;
pub mod upsample;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Matrix, Var};
use crate::data::{ProbabilityMap, RgbImage};
use crate::error::{Error, Result};

pub use adapter::StageAdapter;
pub use backbone::{Backbone, BACKBONE_PREFIX};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{split_heads_channels, HeadSplit, MfptConfig};
pub use decoder::PixelDecoder;
pub use ffrp::{ffrp_gate, group_tokens, ungroup_tokens, FfrpStage};
pub use finp::{finp_fuse, finp_inject, prompt_patches, Finp, FinpStage};
pub use params::{Graph, ParamId, ParamStore, ParameterAccounting};

/// Trainable parameter groups, as named by [`parameter_group`].
pub const TRAINABLE_GROUPS: [&str; 6] =
    ["finp", "patch_embed", "ffrp", "tokens", "adapter", "decoder"];

/// Which trainable group a parameter name belongs to, if any.
pub fn parameter_group(name: &str) -> Option<&'static str> {
    if name.starts_with(BACKBONE_PREFIX) {
        None
    } else if name.ends_with("_token") {
        Some("tokens")
    } else if name.starts_with("finp.") {
        if name.contains(".embed.") {
            Some("patch_embed")
        } else {
            Some("finp")
        }
    } else if name.starts_with("ffrp.") {
        Some("ffrp")
    } else if name.starts_with("adapter.") {
        Some("adapter")
    } else if name.starts_with("decoder.") {
        Some("decoder")
    } else {
        None
    }
}

/// Graph handles produced by one forward pass.
pub struct ForwardOutput {
    pub logits: Var,
    /// Decoder inputs, one per tap stage.
    pub taps: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Mfpt {
    config: MfptConfig,
    params: ParamStore,
    backbone: Backbone,
    finp: Finp,
    adapters: Vec<StageAdapter>,
    ffrp: Vec<FfrpStage>,
    decoder: PixelDecoder,
}

impl Mfpt {
    /// Builds the network. The encoder is drawn from
    /// `config.backbone_seed`; every trainable parameter from `seed`.
    pub fn new(config: MfptConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let backbone = Backbone::register(&mut params, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let finp = Finp::register(&mut params, &config, &mut rng);
        let adapters = (1..=config.n_blocks)
            .map(|n| {
                StageAdapter::register(
                    &mut params,
                    n,
                    config.backbone_channels,
                    config.adapter_rank,
                    &mut rng,
                )
            })
            .collect();
        let ffrp = config
            .tap_stages
            .iter()
            .map(|&n| FfrpStage::register(&mut params, &config, n, &mut rng))
            .collect::<Result<_>>()?;
        let decoder = PixelDecoder::register(&mut params, &config, &mut rng);
        Ok(Self {
            config,
            params,
            backbone,
            finp,
            adapters,
            ffrp,
            decoder,
        })
    }

    pub fn config(&self) -> &MfptConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn finp(&self) -> &Finp {
        &self.finp
    }

    pub fn ffrp_stages(&self) -> &[FfrpStage] {
        &self.ffrp
    }

    pub fn adapters(&self) -> &[StageAdapter] {
        &self.adapters
    }

    pub fn decoder(&self) -> &PixelDecoder {
        &self.decoder
    }

    pub fn accounting(&self) -> ParameterAccounting {
        self.params.accounting()
    }

    fn check_input(&self, image: &RgbImage) -> Result<()> {
        let [w, h] = self.config.input_size;
        if image.width() != w || image.height() != h {
            return Err(Error::shape(
                "forward",
                format!(
                    "image is {}x{}, model expects {w}x{h}",
                    image.width(),
                    image.height()
                ),
            ));
        }
        Ok(())
    }

    /// Records the full network on `g`.
    pub fn forward_graph(&self, g: &mut Graph<'_>, image: &RgbImage) -> Result<ForwardOutput> {
        self.check_input(image)?;
        let cfg = &self.config;
        let patches = self.backbone.image_patches(image)?;
        let prompt = if cfg.enable_finp {
            let p = prompt_patches(image, cfg.highpass_cutoff, cfg.patch_size)?;
            Some(g.tape.constant(p))
        } else {
            None
        };

        let mut refined = self.backbone.embed(g, patches);
        let mut taps = Vec::with_capacity(cfg.tap_stages.len());
        for n in 1..=cfg.n_blocks {
            let mut input = refined;
            if let (Some(prompt), Some(stage)) = (prompt, self.finp.stage(n)) {
                input = stage.forward(g, &self.finp.shared, prompt, refined)?;
            }
            let out = self.backbone.block(g, n, input);
            refined = if cfg.enable_adapter {
                self.adapters[n - 1].apply(g, out)
            } else {
                out
            };
            if let Some(stage) = self.ffrp.iter().find(|s| s.block == n) {
                taps.push(if cfg.enable_ffrp {
                    stage.forward(g, refined)?
                } else {
                    refined
                });
            }
        }
        let logits = self.decoder.forward(g, &taps)?;
        Ok(ForwardOutput { logits, taps })
    }

    /// Evaluation-mode logits, `2 × (H·W)`.
    pub fn forward(&self, image: &RgbImage) -> Result<Matrix> {
        let mut g = Graph::new(&self.params, false);
        let out = self.forward_graph(&mut g, image)?;
        Ok(g.tape.value(out.logits).clone())
    }

    /// Edited-class probability per pixel.
    pub fn predict(&self, image: &RgbImage) -> Result<ProbabilityMap> {
        let logits = self.forward(image)?;
        logits_to_probability(&logits, image.width(), image.height())
    }

    /// Encoder outputs at the tap stages with no prompts and no adapters.
    pub fn backbone_taps(&self, image: &RgbImage) -> Result<Vec<Matrix>> {
        self.check_input(image)?;
        let mut g = Graph::new(&self.params, false);
        let patches = self.backbone.image_patches(image)?;
        let mut x = self.backbone.embed(&mut g, patches);
        let mut taps = Vec::new();
        for n in 1..=self.config.n_blocks {
            x = self.backbone.block(&mut g, n, x);
            if self.config.is_tap(n) {
                taps.push(g.tape.value(x).clone());
            }
        }
        Ok(taps)
    }

    /// Decoder logits for externally supplied tap features, optionally
    /// passed through the feature frequency prompters first.
    pub fn decode_features(&self, features: &[Matrix], apply_ffrp: bool) -> Result<Matrix> {
        let mut g = Graph::new(&self.params, false);
        let mut taps = Vec::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            let v = g.tape.constant(f.clone());
            taps.push(if apply_ffrp {
                self.ffrp
                    .get(i)
                    .ok_or_else(|| Error::shape("decode_features", "more features than taps"))?
                    .forward(&mut g, v)?
            } else {
                v
            });
        }
        let logits = self.decoder.forward(&mut g, &taps)?;
        Ok(g.tape.value(logits).clone())
    }
}

/// Softmax over the two class rows, keeping the edited class.
pub fn logits_to_probability(logits: &Matrix, width: usize, height: usize) -> Result<ProbabilityMap> {
    if logits.dim() != (2, width * height) {
        return Err(Error::shape(
            "logits",
            format!("{:?} for a {width}x{height} image", logits.dim()),
        ));
    }
    let values = logits
        .row(0)
        .iter()
        .zip(logits.row(1))
        .map(|(&z0, &z1)| sigmoid(z1 - z0))
        .collect();
    ProbabilityMap::new(width, height, values)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
