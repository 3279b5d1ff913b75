//! On-disk checkpoints: `checkpoint.json` holds the configuration and training
//! metadata, `weights.bin` the parameters as little-endian `f32` in canonical
//! order (encoder, temporal network, heads, frame-level heads).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CataNet, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::Real;

pub const META_FILE: &str = "checkpoint.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const MAGIC: &[u8; 4] = b"CTNW";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub stage_reached: u8,
    pub seed: u64,
    /// Seconds per time unit of every time-valued quantity.
    pub time_scale: f64,
    pub variant: String,
    pub fold: Option<usize>,
    pub has_aux: bool,
    pub n_params: usize,
    /// Optimizer and schedule settings the checkpoint was trained with.
    #[serde(default)]
    pub training: serde_json::Value,
}

impl CheckpointMeta {
    pub fn for_model<F: Real>(net: &CataNet<F>, seed: u64, time_scale: f64, variant: &str) -> Self {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            model: net.config.clone(),
            stage_reached: net.stage_reached,
            seed,
            time_scale,
            variant: variant.to_string(),
            fold: None,
            has_aux: net.aux.is_some(),
            n_params: net.num_params(),
            training: serde_json::Value::Null,
        }
    }
}

fn all_params<F: Real>(net: &CataNet<F>) -> Vec<F> {
    let mut v = net.encoder.flatten();
    v.extend(net.temporal.flatten());
    v.extend(net.heads.flatten());
    v.extend(net.aux.flatten());
    v
}

pub fn save_checkpoint<F: Real>(net: &CataNet<F>, meta: &CheckpointMeta, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = meta.clone();
    meta.model = net.config.clone();
    meta.stage_reached = net.stage_reached;
    meta.has_aux = net.aux.is_some();
    meta.n_params = net.num_params();
    let values = all_params(net);
    let mut bytes = Vec::with_capacity(16 + 4 * values.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in &values {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, bytes).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::format(&mpath, e.to_string()))?;
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))
}

pub fn read_checkpoint_meta(dir: &Path) -> Result<CheckpointMeta> {
    let mpath = dir.join(META_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))
}

pub fn load_checkpoint<F: Real>(dir: &Path) -> Result<(CataNet<F>, CheckpointMeta)> {
    let meta = read_checkpoint_meta(dir)?;
    let mpath = dir.join(META_FILE);
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format(&mpath, format!("unsupported format version {}", meta.format_version)));
    }
    let mut net = CataNet::<F>::new(meta.model.clone(), meta.seed)?;
    if !meta.has_aux {
        net.discard_aux_heads();
    }
    net.stage_reached = meta.stage_reached;

    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::format(&wpath, "not a weights file"));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let expected = net.num_params();
    if count != expected || bytes.len() != 16 + 4 * count {
        return Err(Error::format(
            &wpath,
            format!("holds {count} parameters, configuration needs {expected}"),
        ));
    }
    let values: Vec<F> = bytes[16..]
        .chunks_exact(4)
        .map(|c| F::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    let mut off = net.encoder.load_flat(&values);
    off += net.temporal.load_flat(&values[off..]);
    off += net.heads.load_flat(&values[off..]);
    off += net.aux.load_flat(&values[off..]);
    debug_assert_eq!(off, values.len());
    Ok((net, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ElapsedMode;

    fn tiny() -> ModelConfig {
        ModelConfig {
            frame_size: (8, 8),
            encoder_channels: vec![3, 5],
            frame_descriptor_dim: 4,
            video_descriptor_dim: 3,
            elapsed_mode: ElapsedMode::AfterRnn,
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn round_trip_is_exact_in_f32() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = CataNet::<f32>::new(tiny(), 11).unwrap();
        net.heads.rsd.b[0] = 0.123;
        net.stage_reached = 2;
        let meta = CheckpointMeta::for_model(&net, 11, 1.0, "catanet");
        save_checkpoint(&net, &meta, dir.path()).unwrap();
        let (back, m) = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(all_params(&back), all_params(&net));
        assert_eq!(m.stage_reached, 2);
        assert_eq!(back.config, net.config);
    }

    #[test]
    fn round_trip_without_aux() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = CataNet::<f32>::new(tiny(), 3).unwrap();
        net.discard_aux_heads();
        save_checkpoint(&net, &CheckpointMeta::for_model(&net, 3, 1.0, "iv"), dir.path()).unwrap();
        let (back, _) = load_checkpoint::<f32>(dir.path()).unwrap();
        assert!(back.aux.is_none());
        assert_eq!(all_params(&back), all_params(&net));
    }

    #[test]
    fn truncated_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let net = CataNet::<f32>::new(tiny(), 3).unwrap();
        save_checkpoint(&net, &CheckpointMeta::for_model(&net, 3, 1.0, "x"), dir.path()).unwrap();
        let w = dir.path().join(WEIGHTS_FILE);
        let bytes = fs::read(&w).unwrap();
        fs::write(&w, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(dir.path()), Err(Error::Format { .. })));
    }
}
