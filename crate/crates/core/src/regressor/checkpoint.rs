//! JSON checkpoints.
//!
//! ```text
//! {"version": 1,
//!  "arch": {"T": 40, "hidden": [70, 70, 70, 70], "activation": "crelu"},
//!  "feature_norm": {"mean": [...], "std": [...]},
//!  "weights": [{"rows": 70, "cols": 160, "w": [...], "b": [...]}, ...],
//!  "train_config": {...},
//!  "checksum": "<sha256 of the other fields>"}
//! ```
//!
//! Weights are row-major, one entry per affine layer with the output layer
//! last. Floats are written in shortest round-trip form, so a loaded model
//! reproduces predictions bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::{Arch, Dense, Mlp};
use super::{MlpModel, TrainConfig};
use crate::track::FeatureNorm;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    arch: Arch,
    feature_norm: FeatureNorm,
    weights: Vec<LayerRecord>,
    train_config: TrainConfig,
    checksum: String,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

fn checksum(
    version: u32,
    arch: &Arch,
    norm: &FeatureNorm,
    weights: &[LayerRecord],
    cfg: &TrainConfig,
) -> Result<String> {
    let payload = serde_json::to_vec(&(version, arch, norm, weights, cfg))?;
    Ok(hex::encode(Sha256::digest(&payload)))
}

fn to_checkpoint(m: &MlpModel) -> Result<Checkpoint> {
    let weights: Vec<LayerRecord> = m
        .mlp
        .layers()
        .iter()
        .map(|l| LayerRecord {
            rows: l.out_dim,
            cols: l.in_dim,
            w: l.weights.clone(),
            b: l.bias.clone(),
        })
        .collect();
    let arch = m.mlp.arch().clone();
    let checksum = checksum(CHECKPOINT_VERSION, &arch, &m.feature_norm, &weights, &m.train_config)?;
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        arch,
        feature_norm: m.feature_norm.clone(),
        weights,
        train_config: m.train_config.clone(),
        checksum,
    })
}

/// Serializes a model to the checkpoint JSON text.
pub fn to_json(m: &MlpModel) -> Result<String> {
    let mut s = serde_json::to_string(&to_checkpoint(m)?)?;
    s.push('\n');
    Ok(s)
}

/// Parses checkpoint text, verifying version, checksum and shapes.
pub fn from_json(text: &str) -> Result<MlpModel> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    if probe.version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: probe.version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let ck: Checkpoint = serde_json::from_str(text)?;
    let computed = checksum(ck.version, &ck.arch, &ck.feature_norm, &ck.weights, &ck.train_config)?;
    if computed != ck.checksum {
        return Err(Error::Checksum {
            stored: ck.checksum,
            computed,
        });
    }
    if ck.feature_norm.mean.len() != ck.arch.input_dim() || ck.feature_norm.std.len() != ck.arch.input_dim() {
        return Err(Error::Validation(format!(
            "feature norm has {} entries, arch expects {}",
            ck.feature_norm.mean.len(),
            ck.arch.input_dim()
        )));
    }
    let layers = ck
        .weights
        .into_iter()
        .map(|r| Dense {
            in_dim: r.cols,
            out_dim: r.rows,
            weights: r.w,
            bias: r.b,
        })
        .collect();
    Ok(MlpModel {
        mlp: Mlp::from_layers(ck.arch, layers)?,
        feature_norm: ck.feature_norm,
        train_config: ck.train_config,
    })
}

pub fn save(m: &MlpModel, path: &Path) -> Result<()> {
    let text = to_json(m)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        Error::Json(j) => Error::Parse {
            context: path.display().to_string(),
            line: j.line(),
            message: j.to_string(),
        },
        other => other,
    })
}
