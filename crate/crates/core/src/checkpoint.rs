//! Checkpoint serialization: a JSON header plus a little-endian f64 blob
//! of all parameters in registration order (`<stem>.json` / `<stem>.bin`).
//!
//! A loaded checkpoint reproduces bit-identical forward passes. The header
//! pins the format version, architecture and schedule configuration,
//! fusion mode, the training record ids, and a checksum of the blob;
//! loading validates all of them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineModel;
use crate::error::{Error, Result};
use crate::predictor::FusionMode;
use crate::training::{EpochLoss, GoalModels, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Diffusion,
    Baseline,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Diffusion => write!(f, "diffusion"),
            ModelKind::Baseline => write!(f, "baseline"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub id: String,
    pub kind: ModelKind,
    pub config: TrainConfig,
    pub epoch: usize,
    pub loss_curve: Vec<EpochLoss>,
    pub train_record_ids: Vec<String>,
    pub params: Vec<ParamSpec>,
    /// Total number of f64 values in the blob.
    pub param_count: usize,
    pub blob_checksum: String,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn header_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

fn blob_bytes(flat: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Write `<stem>.json` and `<stem>.bin` for a trained model.
pub fn save_checkpoint(
    stem: &Path,
    kind: ModelKind,
    config: &TrainConfig,
    epoch: usize,
    loss_curve: &[EpochLoss],
    train_record_ids: &[String],
    store: &crate::params::ParamStore,
) -> Result<CheckpointHeader> {
    let flat = store.flatten();
    let bytes = blob_bytes(&flat);
    let checksum = format!("{:016x}", fnv1a64(&bytes));
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        id: format!(
            "{kind}-{}-seed{}-ep{}-{}",
            config.fusion_mode,
            config.seed,
            epoch,
            &checksum[..8]
        ),
        kind,
        config: config.clone(),
        epoch,
        loss_curve: loss_curve.to_vec(),
        train_record_ids: train_record_ids.to_vec(),
        params: store
            .manifest()
            .into_iter()
            .map(|(name, shape)| ParamSpec { name, shape })
            .collect(),
        param_count: flat.len(),
        blob_checksum: checksum,
    };
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(header_path(stem), serde_json::to_string_pretty(&header)?)?;
    std::fs::write(blob_path(stem), bytes)?;
    Ok(header)
}

/// Read and validate header + blob without building a model.
pub fn load_raw(stem: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let header_json = std::fs::read_to_string(header_path(stem)).map_err(|e| {
        Error::Checkpoint(format!("cannot read {}: {e}", header_path(stem).display()))
    })?;
    let header: CheckpointHeader = serde_json::from_str(&header_json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} unsupported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let bytes = std::fs::read(blob_path(stem)).map_err(|e| {
        Error::Checkpoint(format!("cannot read {}: {e}", blob_path(stem).display()))
    })?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "blob length {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if flat.len() != header.param_count {
        return Err(Error::Checkpoint(format!(
            "blob holds {} values, header expects {}",
            flat.len(),
            header.param_count
        )));
    }
    let checksum = format!("{:016x}", fnv1a64(&bytes));
    if checksum != header.blob_checksum {
        return Err(Error::Checkpoint(format!(
            "blob checksum {checksum} does not match header {}",
            header.blob_checksum
        )));
    }
    Ok((header, flat))
}

/// A rebuilt model with its header.
#[derive(Debug)]
pub enum LoadedModel {
    Diffusion(GoalModels),
    Baseline(BaselineModel),
}

#[derive(Debug)]
pub struct Loaded {
    pub header: CheckpointHeader,
    pub model: LoadedModel,
}

fn validate_manifest(header: &CheckpointHeader, store: &crate::params::ParamStore) -> Result<()> {
    let rebuilt: Vec<ParamSpec> = store
        .manifest()
        .into_iter()
        .map(|(name, shape)| ParamSpec { name, shape })
        .collect();
    if rebuilt != header.params {
        return Err(Error::Checkpoint(
            "parameter manifest does not match the architecture rebuilt from the header config"
                .into(),
        ));
    }
    Ok(())
}

/// Rebuild the model named by the checkpoint and load its parameters.
pub fn load_model(stem: &Path) -> Result<Loaded> {
    load_model_expecting(stem, None)
}

/// As [`load_model`], but reject a diffusion checkpoint whose fusion mode
/// differs from `expected_mode`.
pub fn load_model_expecting(stem: &Path, expected_mode: Option<FusionMode>) -> Result<Loaded> {
    let (header, flat) = load_raw(stem)?;
    if let Some(expected) = expected_mode {
        if header.config.fusion_mode != expected {
            return Err(Error::Checkpoint(format!(
                "fusion mode mismatch: checkpoint is '{}', run expects '{expected}'",
                header.config.fusion_mode
            )));
        }
    }
    let model = match header.kind {
        ModelKind::Diffusion => {
            let mut models = GoalModels::init(&header.config);
            validate_manifest(&header, &models.store)?;
            models.store.load_flat(&flat)?;
            LoadedModel::Diffusion(models)
        }
        ModelKind::Baseline => {
            let mut model = BaselineModel::init(&header.config);
            validate_manifest(&header, &model.store)?;
            model.store.load_flat(&flat)?;
            LoadedModel::Baseline(model)
        }
    };
    Ok(Loaded { header, model })
}
