//! Model files: JSON with the weights as base64 of little-endian f64 values.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::scoring::LinearModel;
use crate::windowing::DescriptorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    /// Cascade stage the model scores (1 or 2).
    pub stage: u8,
    pub scale_id: usize,
    pub descriptor: DescriptorSpec,
    /// Channel count of the map the model was trained on.
    pub channels: usize,
    pub dim: usize,
    pub bias: f64,
    pub weights: String,
}

impl ModelFile {
    pub fn from_model(model: &LinearModel, stage: u8, channels: usize) -> Self {
        let bytes: Vec<u8> = model.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
        ModelFile {
            stage,
            scale_id: model.scale_id,
            descriptor: model.descriptor.clone(),
            channels,
            dim: model.weights.len(),
            bias: model.bias,
            weights: STANDARD.encode(bytes),
        }
    }

    pub fn to_model(&self, path: &Path) -> Result<LinearModel> {
        let bytes = STANDARD
            .decode(&self.weights)
            .map_err(|e| Error::format(path, format!("weights are not base64: {e}")))?;
        if bytes.len() != self.dim * 8 {
            return Err(Error::format(
                path,
                format!("{} weight bytes for dim {}", bytes.len(), self.dim),
            ));
        }
        let expected = self.descriptor.len(self.channels);
        if expected != self.dim {
            return Err(Error::format(
                path,
                format!("descriptor over {} channels has {expected} values, model has {}", self.channels, self.dim),
            ));
        }
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::format(path, format!("unknown stage {}", self.stage)));
        }
        let weights = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        LinearModel::new(weights, self.bias, self.scale_id, self.descriptor.clone())
    }
}

pub fn write_model(path: &Path, model: &LinearModel, stage: u8, channels: usize) -> Result<()> {
    write_json(path, &ModelFile::from_model(model, stage, channels))
}

/// Returns the model and its stage.
pub fn read_model(path: &Path) -> Result<(LinearModel, u8)> {
    let file: ModelFile = read_json(path)?;
    Ok((file.to_model(path)?, file.stage))
}

/// Loads every `*.json` model in `dir`, split by stage and sorted by scale.
pub fn read_model_dir(dir: &Path) -> Result<crate::cascade::ModelSet> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    let mut set = crate::cascade::ModelSet::default();
    for p in entries {
        let (model, stage) = read_model(&p)?;
        let list = if stage == 1 { &mut set.stage1 } else { &mut set.stage2 };
        if list.iter().any(|m| m.scale_id == model.scale_id) {
            return Err(Error::format(
                &p,
                format!("second stage-{stage} model for scale {}", model.scale_id),
            ));
        }
        list.push(model);
    }
    set.stage1.sort_by_key(|m| m.scale_id);
    set.stage2.sort_by_key(|m| m.scale_id);
    Ok(set)
}
