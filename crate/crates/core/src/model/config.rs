use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
///
/// `embed_channels` is the width of the frequency prompt embedding;
/// `backbone_channels` is the frozen encoder width. When the two differ a
/// learned projection pair bridges them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfptConfig {
    pub n_blocks: usize,
    /// 1-based encoder block indices whose outputs feed the decoder.
    pub tap_stages: Vec<usize>,
    pub patch_size: usize,
    pub embed_channels: usize,
    pub backbone_channels: usize,
    pub backbone_heads: usize,
    pub backbone_mlp_ratio: usize,
    /// Attention heads shared by the two frequency branches.
    pub head_count: usize,
    pub freq_ratio: f64,
    pub group_length: usize,
    pub highpass_cutoff: f64,
    pub adapter_rank: usize,
    pub decoder_channels: usize,
    /// `[width, height]`.
    pub input_size: [usize; 2],
    pub backbone_seed: u64,
    pub enable_finp: bool,
    pub enable_ffrp: bool,
    pub enable_adapter: bool,
}

impl Default for MfptConfig {
    fn default() -> Self {
        Self {
            n_blocks: 8,
            tap_stages: vec![2, 4, 6, 8],
            patch_size: 8,
            embed_channels: 64,
            backbone_channels: 64,
            backbone_heads: 4,
            backbone_mlp_ratio: 2,
            head_count: 8,
            freq_ratio: 0.75,
            group_length: 8,
            highpass_cutoff: crate::frequency::DEFAULT_CUTOFF,
            adapter_rank: 8,
            decoder_channels: 32,
            input_size: [64, 64],
            backbone_seed: 0,
            enable_finp: true,
            enable_ffrp: true,
            enable_adapter: true,
        }
    }
}

impl MfptConfig {
    pub fn width(&self) -> usize {
        self.input_size[0]
    }

    pub fn height(&self) -> usize {
        self.input_size[1]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height() / self.patch_size, self.width() / self.patch_size)
    }

    pub fn token_count(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn head_split(&self) -> Result<HeadSplit> {
        split_heads_channels(self.head_count, self.backbone_channels, self.freq_ratio)
    }

    pub fn is_tap(&self, block: usize) -> bool {
        self.tap_stages.contains(&block)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_blocks == 0 {
            return err("n_blocks must be positive".into());
        }
        if self.tap_stages.is_empty() {
            return err("tap_stages must not be empty".into());
        }
        if self.tap_stages.windows(2).any(|w| w[0] >= w[1]) {
            return err(format!("tap_stages {:?} must be strictly increasing", self.tap_stages));
        }
        if self.tap_stages[0] == 0 || *self.tap_stages.last().unwrap() > self.n_blocks {
            return err(format!(
                "tap_stages {:?} must lie in 1..={}",
                self.tap_stages, self.n_blocks
            ));
        }
        let [w, h] = self.input_size;
        if self.patch_size == 0 || w == 0 || h == 0 {
            return err("patch_size and input_size must be positive".into());
        }
        if w % self.patch_size != 0 || h % self.patch_size != 0 {
            return err(format!(
                "patch_size {} does not divide input size {w}x{h}",
                self.patch_size
            ));
        }
        if !(self.freq_ratio > 0.5 && self.freq_ratio <= 1.0) {
            return err(format!("freq_ratio {} outside (0.5, 1]", self.freq_ratio));
        }
        if self.group_length == 0 {
            return err("group_length must be at least 1".into());
        }
        if !(self.highpass_cutoff > 0.0 && self.highpass_cutoff < 1.0) {
            return err(format!("highpass_cutoff {} outside (0, 1)", self.highpass_cutoff));
        }
        for (name, v) in [
            ("embed_channels", self.embed_channels),
            ("backbone_channels", self.backbone_channels),
            ("backbone_heads", self.backbone_heads),
            ("backbone_mlp_ratio", self.backbone_mlp_ratio),
            ("head_count", self.head_count),
            ("adapter_rank", self.adapter_rank),
            ("decoder_channels", self.decoder_channels),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if !self.backbone_channels.is_multiple_of(self.backbone_heads) {
            return err(format!(
                "backbone_channels {} not divisible by backbone_heads {}",
                self.backbone_channels, self.backbone_heads
            ));
        }
        self.head_split()?;
        Ok(())
    }
}

/// Heads and channels of the high- and low-frequency attention branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct HeadSplit {
    pub heads_high: usize,
    pub heads_low: usize,
    pub channels_high: usize,
    pub channels_low: usize,
}

/// Splits `heads` attention heads and `channels` feature channels between
/// the two branches in proportion `ratio`.
///
/// The high branch gets `round(ratio·heads)` heads, clamped so it always has
/// strictly more than the low branch. Its channel count is `round(ratio·channels)`
/// moved to the nearest multiple of its head count (ties go up); the
/// remainder must divide evenly among the low-branch heads.
pub fn split_heads_channels(heads: usize, channels: usize, ratio: f64) -> Result<HeadSplit> {
    if !(ratio > 0.5 && ratio <= 1.0) {
        return Err(Error::Config(format!("freq_ratio {ratio} outside (0.5, 1]")));
    }
    if heads == 0 || channels == 0 {
        return Err(Error::Config("head and channel counts must be positive".into()));
    }
    let heads_high = ((ratio * heads as f64).round() as usize).clamp(heads / 2 + 1, heads);
    let heads_low = heads - heads_high;

    let target = (ratio * channels as f64).round() as usize;
    let below = target / heads_high * heads_high;
    let above = below + heads_high;
    let mut channels_high = if target - below < above - target { below } else { above };
    if channels_high > channels {
        channels_high = below;
    }
    let channels_low = channels - channels_high;

    let invalid = |why: &str| {
        Err(Error::Config(format!(
            "cannot split {channels} channels over {heads_high}+{heads_low} heads at ratio {ratio}: {why}"
        )))
    };
    if channels_high == 0 {
        return invalid("high branch gets no channels");
    }
    if heads_low == 0 && channels_low != 0 {
        return invalid("channels left over with no low-frequency heads");
    }
    if heads_low > 0 && (channels_low == 0 || !channels_low.is_multiple_of(heads_low)) {
        return invalid("low-frequency channels do not divide among its heads");
    }
    Ok(HeadSplit {
        heads_high,
        heads_low,
        channels_high,
        channels_low,
    })
}
