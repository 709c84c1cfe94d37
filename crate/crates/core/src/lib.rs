//! Diffusion-edit localization with multi-frequency prompt tuning.
//!
//! The crate bundles the network (a frozen encoder with frequency input
//! prompters, feature frequency prompters, per-block adapters and a pixel
//! decoder), its training objective and loop, pixel-level evaluation with a
//! degradation harness, and the rule-based label triage used to build
//! training sets from change-detection probability maps.

pub mod autograd;
pub mod data;
mod error;
pub mod eval;
pub mod frequency;
pub mod model;
pub mod synth;
pub mod train;
pub mod triage;

pub use error::{Error, Result};
