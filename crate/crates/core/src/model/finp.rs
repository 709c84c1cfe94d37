//! Frequency input prompters.
//!
//! The grayscale image is high-pass filtered, cut into patches and embedded
//! per stage. The embedded prompt is added to the previous stage's refined
//! features, passed through a stage MLP and the MLP shared by all stages,
//! and the result is added back onto those features before the next
//! encoder block runs.

use rand::Rng;

use crate::autograd::{Matrix, Tape, Var};
use crate::data::RgbImage;
use crate::error::{Error, Result};
use crate::frequency::{highpass_prompt, to_grayscale};

use super::config::MfptConfig;
use super::layers::{plane_patches, Activation, Mlp};
use super::params::{identity_or_normal, normal, Graph, Linear, ParamId, ParamStore};

/// Scales 8-bit high-pass residuals to roughly unit magnitude.
pub const PROMPT_SCALE: f64 = 1.0 / 64.0;

/// Patches of the scaled high-pass prompt image, `P² × L`.
pub fn prompt_patches(image: &RgbImage, cutoff: f64, patch: usize) -> Result<Matrix> {
    let prompt = highpass_prompt(&to_grayscale(image), cutoff)?;
    let mut p = plane_patches(&prompt, patch)?;
    p *= PROMPT_SCALE;
    Ok(p)
}

/// `f_s(f_m(prompt + previous))`.
pub fn finp_fuse(
    g: &mut Graph<'_>,
    stage_mlp: &Mlp,
    shared_mlp: &Mlp,
    prompt: Var,
    previous: Var,
    act: Activation,
) -> Result<Var> {
    let (a, b) = (g.tape.shape(prompt), g.tape.shape(previous));
    if a != b {
        return Err(Error::shape("finp_fuse", format!("{a:?} vs {b:?}")));
    }
    let x = g.tape.add(prompt, previous);
    let x = stage_mlp.apply(g, x, act);
    Ok(shared_mlp.apply(g, x, act))
}

/// Element-wise sum of the prompt feature and the features it refines.
pub fn finp_inject(tape: &mut Tape, prompt_feature: Var, previous: Var) -> Result<Var> {
    let (a, b) = (tape.shape(prompt_feature), tape.shape(previous));
    if a != b {
        return Err(Error::shape("finp_inject", format!("{a:?} vs {b:?}")));
    }
    Ok(tape.add(prompt_feature, previous))
}

#[derive(Clone, Debug)]
pub struct FinpStage {
    pub block: usize,
    pub embed: Linear,
    pub mlp: Mlp,
    /// `C × Ĉ`, backbone width to prompt width.
    pub bridge_in: ParamId,
    /// `Ĉ × C`, back again.
    pub bridge_out: ParamId,
}

#[derive(Clone, Debug)]
pub struct Finp {
    pub stages: Vec<FinpStage>,
    pub shared: Mlp,
}

fn mlp(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c: usize, out_std: f64) -> Mlp {
    Mlp {
        fc1: Linear::register(
            store,
            &format!("{name}.fc1"),
            normal(rng, c, c, 1.0 / (c as f64).sqrt()),
            true,
        ),
        fc2: Linear::register(store, &format!("{name}.fc2"), normal(rng, c, c, out_std), true),
    }
}

impl Finp {
    pub fn register(store: &mut ParamStore, cfg: &MfptConfig, rng: &mut impl Rng) -> Self {
        let c = cfg.embed_channels;
        let cb = cfg.backbone_channels;
        let pin = cfg.patch_size * cfg.patch_size;
        let stages = cfg
            .tap_stages
            .iter()
            .map(|&n| {
                let base = format!("finp.stage{n}");
                FinpStage {
                    block: n,
                    embed: Linear::register(
                        store,
                        &format!("{base}.embed"),
                        normal(rng, c, pin, 1.0 / (pin as f64).sqrt()),
                        true,
                    ),
                    mlp: mlp(store, rng, &format!("{base}.fm"), c, 1.0 / (c as f64).sqrt()),
                    bridge_in: store.add(
                        format!("{base}.bridge_in"),
                        identity_or_normal(rng, c, cb),
                        true,
                    ),
                    bridge_out: store.add(
                        format!("{base}.bridge_out"),
                        identity_or_normal(rng, cb, c),
                        true,
                    ),
                }
            })
            .collect();
        // Small output weights keep the initial prompt a mild perturbation of
        // the frozen features.
        let shared = mlp(store, rng, "finp.shared.fs", c, 0.02);
        Self { stages, shared }
    }

    pub fn stage(&self, block: usize) -> Option<&FinpStage> {
        self.stages.iter().find(|s| s.block == block)
    }
}

impl FinpStage {
    /// Stage-specific linear patch embedding of the prompt patches.
    pub fn patch_embed(&self, g: &mut Graph<'_>, patches: Var) -> Var {
        self.embed.apply(g, patches)
    }

    /// Produces the input of encoder block `self.block` from the refined
    /// output of the previous block.
    pub fn forward(&self, g: &mut Graph<'_>, shared: &Mlp, patches: Var, previous: Var) -> Result<Var> {
        let prompt = self.patch_embed(g, patches);
        let bridge_in = g.param(self.bridge_in);
        let prev_c = g.tape.matmul(bridge_in, previous);
        let fused = finp_fuse(g, &self.mlp, shared, prompt, prev_c, Activation::Gelu)?;
        let bridge_out = g.param(self.bridge_out);
        let back = g.tape.matmul(bridge_out, fused);
        finp_inject(&mut g.tape, back, previous)
    }
}
