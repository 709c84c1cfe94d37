//! Checkpoint archives.
//!
//! A checkpoint is a safetensors file: every parameter is stored as a
//! little-endian `f64` tensor under its stable name (for example
//! `finp.stage2.fm.fc1.w` or `backbone.block3.attn.q.w`), and the model
//! configuration is stored as JSON under the `config` metadata key. Encoder
//! weights are imported from the same format.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::autograd::Matrix;
use crate::error::{Error, Result};

use super::backbone::BACKBONE_PREFIX;
use super::config::MfptConfig;
use super::params::ParamStore;
use super::Mfpt;

const CONFIG_KEY: &str = "config";

fn ckpt_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

/// Serializes named matrices plus optional config JSON to bytes.
pub fn encode_archive(params: &ParamStore, config: Option<&MfptConfig>) -> Result<Vec<u8>> {
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = params
        .iter()
        .map(|(_, p)| {
            let bytes = p.value.iter().flat_map(|v| v.to_le_bytes()).collect();
            (p.name.clone(), vec![p.value.nrows(), p.value.ncols()], bytes)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(ckpt_err)
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata = match config {
        Some(c) => Some(HashMap::from([(
            CONFIG_KEY.to_owned(),
            serde_json::to_string(c)?,
        )])),
        None => None,
    };
    safetensors::serialize(views, &metadata).map_err(ckpt_err)
}

fn read_matrix(archive: &SafeTensors<'_>, name: &str) -> Result<Matrix> {
    let view = archive.tensor(name).map_err(ckpt_err)?;
    if view.dtype() != Dtype::F64 {
        return Err(Error::Checkpoint(format!("{name}: expected f64, found {:?}", view.dtype())));
    }
    let shape = view.shape();
    let (rows, cols) = match *shape {
        [r, c] => (r, c),
        [n] => (n, 1),
        _ => return Err(Error::Checkpoint(format!("{name}: unsupported rank {}", shape.len()))),
    };
    let values = view
        .data()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_shape_vec((rows, cols), values).map_err(ckpt_err)
}

/// Writes the whole model, frozen encoder included.
pub fn save_checkpoint(model: &Mfpt, path: &Path) -> Result<()> {
    let bytes = encode_archive(model.params(), Some(model.config()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Rebuilds a model from a checkpoint. Every parameter of the configured
/// architecture must be present with the right shape, and nothing else.
pub fn load_checkpoint(path: &Path) -> Result<Mfpt> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(ckpt_err)?;
    let config_json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(CONFIG_KEY))
        .ok_or_else(|| Error::Checkpoint(format!("{}: no model config", path.display())))?;
    let config: MfptConfig = serde_json::from_str(config_json)?;
    let mut model = Mfpt::new(config, 0)?;
    let archive = SafeTensors::deserialize(&bytes).map_err(ckpt_err)?;
    let expected = model.params().len();
    if archive.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{} tensors in archive, model has {expected} parameters",
            archive.len()
        )));
    }
    assign(&archive, model.params_mut(), |_| true)?;
    Ok(model)
}

/// Replaces the frozen encoder weights with those in a named-array archive.
/// The archive must provide every `backbone.*` parameter of the model.
pub fn import_backbone(model: &mut Mfpt, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let archive = SafeTensors::deserialize(&bytes).map_err(ckpt_err)?;
    assign(&archive, model.params_mut(), |name| name.starts_with(BACKBONE_PREFIX))
}

fn assign(
    archive: &SafeTensors<'_>,
    params: &mut ParamStore,
    select: impl Fn(&str) -> bool,
) -> Result<()> {
    // Validate everything before touching the store.
    let mut loaded = Vec::new();
    for (id, p) in params.iter().filter(|(_, p)| select(&p.name)) {
        let m = read_matrix(archive, &p.name)?;
        if m.dim() != p.value.dim() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?}, expected {:?}",
                p.name,
                m.dim(),
                p.value.dim()
            )));
        }
        loaded.push((id, m));
    }
    for (id, m) in loaded {
        *params.value_mut(id) = m;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MfptConfig {
        MfptConfig {
            n_blocks: 2,
            tap_stages: vec![2],
            input_size: [16, 16],
            backbone_channels: 16,
            embed_channels: 16,
            decoder_channels: 8,
            head_count: 4,
            ..MfptConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let model = Mfpt::new(tiny(), 3).unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save_checkpoint(&model, &a).unwrap();
        let restored = load_checkpoint(&a).unwrap();
        save_checkpoint(&restored, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        for ((_, p), (_, q)) in model.params().iter().zip(restored.params().iter()) {
            assert_eq!(p.name, q.name);
            assert_eq!(p.value, q.value);
        }
    }

    #[test]
    fn backbone_import_replaces_only_encoder() {
        let dir = tempfile::tempdir().unwrap();
        let mut donor_cfg = tiny();
        donor_cfg.backbone_seed = 42;
        let donor = Mfpt::new(donor_cfg, 0).unwrap();
        let path = dir.path().join("enc.safetensors");
        fs::write(&path, encode_archive(donor.params(), None).unwrap()).unwrap();

        let mut model = Mfpt::new(tiny(), 0).unwrap();
        let before = model.params().clone();
        import_backbone(&mut model, &path).unwrap();
        for ((_, p), (_, old)) in model.params().iter().zip(before.iter()) {
            let donor_value = &donor.params().by_name(&p.name).unwrap().value;
            if p.name.starts_with(BACKBONE_PREFIX) {
                assert_eq!(&p.value, donor_value);
            } else {
                assert_eq!(p.value, old.value);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut wide = tiny();
        wide.backbone_channels = 32;
        wide.embed_channels = 32;
        let donor = Mfpt::new(wide, 0).unwrap();
        let path = dir.path().join("enc.safetensors");
        fs::write(&path, encode_archive(donor.params(), None).unwrap()).unwrap();
        let mut model = Mfpt::new(tiny(), 0).unwrap();
        assert!(import_backbone(&mut model, &path).is_err());
    }
}
