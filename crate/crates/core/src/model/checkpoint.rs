//! JSON checkpoint container.
//!
//! Top-level fields, in order: `format`, `version`, `sharing`, `seed`,
//! `dims`, `atom_features`, `bond_features`, `tasks` (index, name,
//! normalization), and `params` (name, shape, row-major data) in
//! registration order. Floats are written in shortest round-trip form, so
//! loading reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderSharing, GateModel, ModelDims, ModelError, Normalization};
use crate::diff::Tensor;
use crate::featurize::{ATOM_FEATURES, BOND_FEATURES};

pub const CHECKPOINT_FORMAT: &str = "gate-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskEntry {
    index: usize,
    name: String,
    normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    sharing: EncoderSharing,
    seed: u64,
    dims: ModelDims,
    atom_features: usize,
    bond_features: usize,
    tasks: Vec<TaskEntry>,
    params: Vec<ParamEntry>,
}

impl GateModel {
    pub fn to_checkpoint_json(&self) -> Result<String, ModelError> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            sharing: self.sharing,
            seed: self.seed,
            dims: self.dims,
            atom_features: ATOM_FEATURES,
            bond_features: BOND_FEATURES,
            tasks: self
                .tasks
                .iter()
                .zip(&self.normalization)
                .map(|(t, n)| TaskEntry { index: t.index, name: t.name.clone(), normalization: *n })
                .collect(),
            params: self
                .params
                .names()
                .iter()
                .zip(self.params.tensors())
                .map(|(name, t)| ParamEntry { name: name.clone(), shape: t.shape().to_vec(), data: t.data().to_vec() })
                .collect(),
        };
        serde_json::to_string(&file).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, ModelError> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", file.version)));
        }
        if file.atom_features != ATOM_FEATURES || file.bond_features != BOND_FEATURES {
            return Err(ModelError::Checkpoint("feature widths do not match this build".into()));
        }
        if file.tasks.iter().enumerate().any(|(i, t)| t.index != i) {
            return Err(ModelError::Checkpoint("task indices must be 0..n in order".into()));
        }
        let names: Vec<String> = file.tasks.iter().map(|t| t.name.clone()).collect();
        let mut model = GateModel::new(&names, file.dims, file.sharing, file.seed)?;
        if file.params.len() != model.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                file.params.len()
            )));
        }
        for entry in file.params {
            let id = model
                .params
                .find(&entry.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter {}", entry.name)))?;
            if model.params.get(id).shape() != entry.shape.as_slice() {
                return Err(ModelError::Checkpoint(format!("shape mismatch for {}", entry.name)));
            }
            *model.params.get_mut(id) = Tensor::new(entry.shape, entry.data)?;
        }
        model.normalization = file.tasks.iter().map(|t| t.normalization).collect();
        Ok(model)
    }
}

pub fn save_checkpoint(model: &GateModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, model.to_checkpoint_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GateModel, ModelError> {
    GateModel::from_checkpoint_json(&fs::read_to_string(path)?)
}
