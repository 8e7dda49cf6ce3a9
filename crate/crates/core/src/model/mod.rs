//! Per-task Regression Units and transfer autoencoders.
//!
//! Each task owns a directed message-passing encoder with an MLP tail, a
//! property head, and a transfer pair: `forward` maps the task latent into
//! the shared locally flat frame and `inverse` maps flat-frame vectors back.
//! The inverse is a separate network, tied to the forward map only through
//! the reconstruction loss.

mod checkpoint;
mod params;
mod perturb;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use params::{Bound, Linear, Mlp, ParamId, ParamStore};
pub use perturb::{perturb, perturbation_offsets, PerturbationSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{DiffError, Var};
use crate::featurize::{GraphBatch, ATOM_FEATURES, BOND_FEATURES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("batch has {found} {what} features, model expects {expected}")]
    FeatureWidth { what: &'static str, found: usize, expected: usize },
    #[error("task index {index} out of range for {count} tasks")]
    UnknownTask { index: usize, count: usize },
    #[error("invalid perturbation request: {0}")]
    Perturbation(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskId {
    pub index: usize,
    pub name: String,
}

/// Layer sizes shared by every task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Message width `H`.
    pub hidden: usize,
    /// Latent and flat-frame width `D`.
    pub latent: usize,
    /// Message-passing rounds `T`.
    pub rounds: usize,
    pub tail_layers: usize,
    pub head_layers: usize,
    pub transfer_layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { hidden: 64, latent: 32, rounds: 3, tail_layers: 2, head_layers: 2, transfer_layers: 2 }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("hidden", self.hidden),
            ("latent", self.latent),
            ("rounds", self.rounds),
            ("tail_layers", self.tail_layers),
            ("head_layers", self.head_layers),
            ("transfer_layers", self.transfer_layers),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(ModelError::Config(format!("{name} must be at least 1"))),
            None => Ok(()),
        }
    }
}

/// How encoders are shared between tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSharing {
    /// One encoder per task (STL and GATE).
    PerTask,
    /// One encoder for all tasks, per-task heads (hard-sharing MTL).
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w_in: ParamId,
    pub w_msg: ParamId,
    pub w_out: ParamId,
    pub tail: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferParams {
    pub forward: Mlp,
    pub inverse: Mlp,
}

/// z-score statistics of a task's training targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { mean: 0.0, std: 1.0 };

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    tasks: Vec<TaskId>,
    dims: ModelDims,
    sharing: EncoderSharing,
    seed: u64,
    pub params: ParamStore,
    encoders: Vec<EncoderParams>,
    heads: Vec<HeadParams>,
    transfers: Vec<TransferParams>,
    /// Target statistics per task, used to report on the original scale.
    pub normalization: Vec<Normalization>,
}

impl GateModel {
    pub fn new(task_names: &[String], dims: ModelDims, sharing: EncoderSharing, seed: u64) -> Result<Self, ModelError> {
        dims.validate()?;
        if task_names.is_empty() {
            return Err(ModelError::Config("at least one task is required".into()));
        }
        let tasks: Vec<TaskId> =
            task_names.iter().enumerate().map(|(index, name)| TaskId { index, name: name.clone() }).collect();
        let (h, d) = (dims.hidden, dims.latent);
        let mut params = ParamStore::new();
        let encoder_count = match sharing {
            EncoderSharing::PerTask => tasks.len(),
            EncoderSharing::Shared => 1,
        };
        let encoders = (0..encoder_count)
            .map(|e| {
                let name = format!("encoder{e}");
                let edge_in = ATOM_FEATURES + BOND_FEATURES;
                let atom_in = ATOM_FEATURES + h;
                EncoderParams {
                    w_in: params.init_uniform(format!("{name}.w_in"), &[edge_in, h], edge_in, seed),
                    w_msg: params.init_uniform(format!("{name}.w_msg"), &[h, h], h, seed),
                    w_out: params.init_uniform(format!("{name}.w_out"), &[atom_in, h], atom_in, seed),
                    tail: Mlp::new(&mut params, &format!("{name}.tail"), h, h, d, dims.tail_layers, seed),
                }
            })
            .collect();
        let heads = (0..tasks.len())
            .map(|t| HeadParams { mlp: Mlp::new(&mut params, &format!("head{t}"), d, d, 1, dims.head_layers, seed) })
            .collect();
        let transfers = (0..tasks.len())
            .map(|t| TransferParams {
                forward: Mlp::new(&mut params, &format!("transfer{t}.forward"), d, d, d, dims.transfer_layers, seed),
                inverse: Mlp::new(&mut params, &format!("transfer{t}.inverse"), d, d, d, dims.transfer_layers, seed),
            })
            .collect();
        let normalization = vec![Normalization::IDENTITY; tasks.len()];
        Ok(Self { tasks, dims, sharing, seed, params, encoders, heads, transfers, normalization })
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn sharing(&self) -> EncoderSharing {
        self.sharing
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_task(&self, task: usize) -> Result<(), ModelError> {
        if task >= self.tasks.len() {
            return Err(ModelError::UnknownTask { index: task, count: self.tasks.len() });
        }
        Ok(())
    }

    pub fn encoder(&self, task: usize) -> &EncoderParams {
        match self.sharing {
            EncoderSharing::PerTask => &self.encoders[task],
            EncoderSharing::Shared => &self.encoders[0],
        }
    }

    pub fn head(&self, task: usize) -> &HeadParams {
        &self.heads[task]
    }

    pub fn transfer(&self, task: usize) -> &TransferParams {
        &self.transfers[task]
    }

    /// Directed-edge message passing followed by mean pooling: `[graphs × H]`.
    pub fn embed(&self, p: &Bound<'_>, task: usize, batch: &GraphBatch) -> Result<Var, ModelError> {
        self.check_task(task)?;
        if batch.atom_features.cols() != ATOM_FEATURES {
            return Err(ModelError::FeatureWidth { what: "atom", found: batch.atom_features.cols(), expected: ATOM_FEATURES });
        }
        if batch.edge_features.cols() != BOND_FEATURES {
            return Err(ModelError::FeatureWidth { what: "bond", found: batch.edge_features.cols(), expected: BOND_FEATURES });
        }
        let enc = self.encoder(task);
        let tape = p.tape;
        let atoms = batch.atom_count();
        let x = tape.constant(batch.atom_features.clone())?;
        let bond = tape.constant(batch.edge_features.clone())?;
        let edge_in = tape.concat_cols(tape.gather_rows(x, &batch.edge_source)?, bond)?;
        let h0 = tape.relu(tape.matmul(edge_in, p.var(enc.w_in))?)?;
        let mut h = h0;
        for _ in 0..self.dims.rounds {
            let into_atom = tape.scatter_add_rows(h, &batch.edge_target, atoms)?;
            let message = tape.sub(
                tape.gather_rows(into_atom, &batch.edge_source)?,
                tape.gather_rows(h, &batch.reverse_edge)?,
            )?;
            h = tape.relu(tape.add(h0, tape.matmul(message, p.var(enc.w_msg))?)?)?;
        }
        let incoming = tape.scatter_add_rows(h, &batch.edge_target, atoms)?;
        let atom_h = tape.relu(tape.matmul(tape.concat_cols(x, incoming)?, p.var(enc.w_out))?)?;
        Ok(tape.segment_mean(atom_h, &batch.graph_id, batch.graph_count)?)
    }

    /// MLP tail from pooled embedding `[n × H]` to latent `[n × D]`.
    pub fn encode_tail(&self, p: &Bound<'_>, task: usize, embedding: Var) -> Result<Var, ModelError> {
        self.check_task(task)?;
        Ok(self.encoder(task).tail.forward(p, embedding)?)
    }

    /// `embed` then `encode_tail`.
    pub fn encode(&self, p: &Bound<'_>, task: usize, batch: &GraphBatch) -> Result<Var, ModelError> {
        let e = self.embed(p, task, batch)?;
        self.encode_tail(p, task, e)
    }

    /// Head prediction `[n × 1]` in normalized target units.
    pub fn predict(&self, p: &Bound<'_>, task: usize, z: Var) -> Result<Var, ModelError> {
        self.check_task(task)?;
        Ok(self.heads[task].mlp.forward(p, z)?)
    }

    pub fn transfer_forward(&self, p: &Bound<'_>, task: usize, z: Var) -> Result<Var, ModelError> {
        self.check_task(task)?;
        Ok(self.transfers[task].forward.forward(p, z)?)
    }

    pub fn transfer_inverse(&self, p: &Bound<'_>, task: usize, flat: Var) -> Result<Var, ModelError> {
        self.check_task(task)?;
        Ok(self.transfers[task].inverse.forward(p, flat)?)
    }

    /// Carries a source-task latent into the target task's latent space
    /// through the shared flat frame.
    pub fn cross_latent(&self, p: &Bound<'_>, source: usize, target: usize, z_source: Var) -> Result<Var, ModelError> {
        let flat = self.transfer_forward(p, source, z_source)?;
        self.transfer_inverse(p, target, flat)
    }

    /// Parameter ids owned by one task's encoder.
    pub fn encoder_param_ids(&self, task: usize) -> Vec<ParamId> {
        let enc = self.encoder(task);
        let mut ids = vec![enc.w_in, enc.w_msg, enc.w_out];
        ids.extend(enc.tail.param_ids());
        ids
    }

    /// Every parameter a single-task regressor for `task` uses.
    pub fn regression_unit_param_ids(&self, task: usize) -> Vec<ParamId> {
        let mut ids = self.encoder_param_ids(task);
        ids.extend(self.heads[task].mlp.param_ids());
        ids
    }
}
