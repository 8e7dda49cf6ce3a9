//! The five GATE loss terms and their composition over task pairs.
//!
//! For a target task `t` and source `α` on the same molecule batch:
//!
//! * regression: `MSE(ŷ_t, y_t)`
//! * autoencoder: `MSE(inv_t(fwd_t z_t), z_t) + MSE(inv_α(fwd_α z_α), z_α)`
//! * consistency: `MSE(fwd_α z_α, fwd_t z_t)`
//! * mapping: `MSE(y_t, head_t(inv_t(fwd_α z_α)))`
//! * distance: `C_α/M · Σ_i MSE(s^i_α, s^i_t)` where `s^i` is the flat-frame
//!   distance between a molecule and its `i`-th perturbation
//!
//! When a task has several partners the per-pair terms are averaged, so the
//! weights keep their meaning as the task count grows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{DiffError, Tape, Tensor, Var};
use crate::featurize::GraphBatch;
use crate::hash;
use crate::model::{perturbation_offsets, Bound, GateModel, ModelError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Shape(String),
    #[error("invalid loss weights: {0}")]
    Weights(String),
    #[error("non-finite value in {term}: {source}")]
    NonFinite {
        term: &'static str,
        #[source]
        source: Box<LossError>,
    },
}

impl LossError {
    /// The loss term a numerical failure was traced to, if any.
    pub fn term(&self) -> Option<&'static str> {
        match self {
            LossError::NonFinite { term, .. } => Some(term),
            _ => None,
        }
    }
}

/// Which ordered task pairs carry alignment terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Every ordered pair `(t, α)`, `t ≠ α`.
    AllPairs,
    /// Only pairs whose target is the given task.
    Star(usize),
}

impl Pairing {
    /// Source tasks aligned against `task` when its batch is current.
    pub fn partners(&self, task: usize, task_count: usize) -> Vec<usize> {
        match *self {
            Pairing::AllPairs => (0..task_count).filter(|&a| a != task).collect(),
            Pairing::Star(target) if target == task => (0..task_count).filter(|&a| a != task).collect(),
            Pairing::Star(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// `C` for a `(target, source)` pair; pairs not listed use `default_ratio`.
    #[serde(with = "ratio_list")]
    pub distance_ratios: BTreeMap<(usize, usize), f64>,
    pub default_ratio: f64,
    pub perturbations: usize,
    pub sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.5,
            delta: 0.5,
            distance_ratios: BTreeMap::new(),
            default_ratio: 1.0,
            perturbations: 4,
            sigma: 0.01,
        }
    }
}

impl LossWeights {
    /// All alignment weights zero: the objective is plain per-task regression.
    pub fn regression_only() -> Self {
        Self { alpha: 0.0, beta: 0.0, gamma: 0.0, delta: 0.0, ..Self::default() }
    }

    pub fn ratio(&self, target: usize, source: usize) -> f64 {
        self.distance_ratios.get(&(target, source)).copied().unwrap_or(self.default_ratio)
    }

    pub fn alignment_active(&self) -> bool {
        self.alpha > 0.0 || self.beta > 0.0 || self.gamma > 0.0 || self.delta > 0.0
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let named = [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)];
        for (name, w) in named.into_iter().chain([("default_ratio", self.default_ratio), ("sigma", self.sigma)]) {
            if !(w.is_finite() && w >= 0.0) {
                return Err(LossError::Weights(format!("{name} must be finite and non-negative, got {w}")));
            }
        }
        if let Some(((t, a), c)) = self.distance_ratios.iter().find(|(_, c)| !(c.is_finite() && **c >= 0.0)) {
            return Err(LossError::Weights(format!("distance ratio for ({t}, {a}) must be finite and non-negative, got {c}")));
        }
        if self.delta > 0.0 && self.perturbations < 1 {
            return Err(LossError::Weights("perturbations must be at least 1 when delta > 0".into()));
        }
        Ok(())
    }
}

/// Serializes the ratio map as `[[target, source, C], ...]`.
mod ratio_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<(usize, usize), f64>, s: S) -> Result<S::Ok, S::Error> {
        map.iter().map(|(&(t, a), &c)| (t, a, c)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(usize, usize), f64>, D::Error> {
        Ok(Vec::<(usize, usize, f64)>::deserialize(d)?.into_iter().map(|(t, a, c)| ((t, a), c)).collect())
    }
}

/// Loss values for one `(target, source)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLossBreakdown {
    pub target: usize,
    pub source: usize,
    pub l_reg: f64,
    pub l_auto: f64,
    pub l_cons: f64,
    pub l_map: f64,
    pub l_dis: f64,
    pub l_tot: f64,
}

/// `l_reg + α·l_auto + β·l_cons + γ·l_map + δ·l_dis`.
pub fn total_loss(l_reg: f64, l_auto: f64, l_cons: f64, l_map: f64, l_dis: f64, w: &LossWeights) -> f64 {
    l_reg + w.alpha * l_auto + w.beta * l_cons + w.gamma * l_map + w.delta * l_dis
}

fn same_shape(tape: &Tape, what: &str, a: Var, b: Var) -> Result<(), LossError> {
    let (sa, sb) = (tape.value(a).shape().to_vec(), tape.value(b).shape().to_vec());
    if sa != sb {
        return Err(LossError::Shape(format!("{what}: shapes {sa:?} and {sb:?} differ")));
    }
    Ok(())
}

fn sum_vars(tape: &Tape, terms: &[Var]) -> Result<Var, LossError> {
    let mut iter = terms.iter().copied();
    let mut acc = iter.next().map_or_else(|| tape.constant(Tensor::scalar(0.0)), Ok)?;
    for v in iter {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

pub fn regression_loss(tape: &Tape, y: Var, y_hat: Var) -> Result<Var, LossError> {
    same_shape(tape, "regression", y, y_hat)?;
    if tape.value(y).is_empty() {
        return Err(LossError::Shape("regression loss needs at least one target".into()));
    }
    Ok(tape.mse(y, y_hat)?)
}

/// `Σ MSE(z, ẑ)` over `(z, ẑ)` pairs, one per participating task.
pub fn autoencoder_loss(tape: &Tape, pairs: &[(Var, Var)]) -> Result<Var, LossError> {
    let terms = pairs
        .iter()
        .map(|&(z, z_hat)| {
            same_shape(tape, "autoencoder", z, z_hat)?;
            Ok(tape.mse(z, z_hat)?)
        })
        .collect::<Result<Vec<_>, LossError>>()?;
    sum_vars(tape, &terms)
}

/// `Σ_α MSE(z′_α, z′_t)`.
pub fn consistency_loss(tape: &Tape, flat_target: Var, flat_sources: &[Var]) -> Result<Var, LossError> {
    let terms = flat_sources
        .iter()
        .map(|&s| {
            same_shape(tape, "consistency", s, flat_target)?;
            Ok(tape.mse(s, flat_target)?)
        })
        .collect::<Result<Vec<_>, LossError>>()?;
    sum_vars(tape, &terms)
}

/// `Σ_α MSE(y_t, ŷ_{α→t})`.
pub fn mapping_loss(tape: &Tape, y_target: Var, cross_predictions: &[Var]) -> Result<Var, LossError> {
    if tape.value(y_target).is_empty() {
        return Err(LossError::Shape("mapping loss needs target labels".into()));
    }
    let terms = cross_predictions
        .iter()
        .map(|&p| {
            same_shape(tape, "mapping", y_target, p)?;
            Ok(tape.mse(y_target, p)?)
        })
        .collect::<Result<Vec<_>, LossError>>()?;
    sum_vars(tape, &terms)
}

/// Row-wise Euclidean distance `[n × 1]` between pivot and perturbed flat-frame vectors.
pub fn displacement(tape: &Tape, pivot: Var, perturbed: Var) -> Result<Var, LossError> {
    same_shape(tape, "displacement", pivot, perturbed)?;
    Ok(tape.row_norms(tape.sub(pivot, perturbed)?)?)
}

/// `(1/M)·Σ_α C_α·Σ_i MSE(s^i_α, s^i_t)`.
///
/// `target[i]` holds `s^i_t`; each source supplies its `M` displacements and ratio.
pub fn distance_loss(tape: &Tape, target: &[Var], sources: &[(&[Var], f64)]) -> Result<Var, LossError> {
    let m = target.len();
    if m == 0 {
        return Err(LossError::Shape("distance loss needs at least one perturbation".into()));
    }
    let mut terms = Vec::new();
    for (s_alpha, ratio) in sources {
        if s_alpha.len() != m {
            return Err(LossError::Shape(format!("source has {} perturbations, target has {m}", s_alpha.len())));
        }
        let mut per_source = Vec::with_capacity(m);
        for (&a, &t) in s_alpha.iter().zip(target) {
            same_shape(tape, "distance", a, t)?;
            per_source.push(tape.mse(a, t)?);
        }
        terms.push(tape.scale(sum_vars(tape, &per_source)?, ratio / m as f64)?);
    }
    sum_vars(tape, &terms)
}

/// Per-task activations reused across the pairs a task appears in.
struct TaskPass {
    z: Var,
    flat: Var,
    auto: Option<Var>,
    /// Flat-frame displacement for each perturbation.
    displacements: Vec<Var>,
}

/// Which terms to evaluate.
#[derive(Debug, Clone, Copy)]
struct Terms {
    auto: bool,
    cons: bool,
    map: bool,
    dis: bool,
}

impl Terms {
    const ALL: Terms = Terms { auto: true, cons: true, map: true, dis: true };

    fn from_weights(w: &LossWeights) -> Self {
        Terms { auto: w.alpha > 0.0, cons: w.beta > 0.0, map: w.gamma > 0.0, dis: w.delta > 0.0 }
    }

    fn any(&self) -> bool {
        self.auto || self.cons || self.map || self.dis
    }
}

fn tagged<T>(term: &'static str, r: Result<T, impl Into<LossError>>) -> Result<T, LossError> {
    r.map_err(|e| {
        let e = e.into();
        let non_finite = matches!(
            &e,
            LossError::Diff(DiffError::NonFinite { .. }) | LossError::Model(ModelError::Diff(DiffError::NonFinite { .. }))
        );
        if non_finite {
            LossError::NonFinite { term, source: Box::new(e) }
        } else {
            e
        }
    })
}

fn task_pass(
    model: &GateModel,
    p: &Bound<'_>,
    task: usize,
    embedding: Var,
    offsets: &[Tensor],
    terms: Terms,
) -> Result<TaskPass, LossError> {
    let tape = p.tape;
    let z = tagged("l_reg", model.encode_tail(p, task, embedding))?;
    let flat = model.transfer_forward(p, task, z);
    let flat = tagged(if terms.cons || terms.map { "l_cons" } else { "l_auto" }, flat)?;
    let auto = if terms.auto {
        let z_hat = tagged("l_auto", model.transfer_inverse(p, task, flat))?;
        Some(tagged("l_auto", autoencoder_loss(tape, &[(z, z_hat)]))?)
    } else {
        None
    };
    let mut displacements = Vec::new();
    if terms.dis {
        for offset in offsets {
            let d = (|| -> Result<Var, LossError> {
                let noisy = tape.add(embedding, tape.constant(offset.clone())?)?;
                let z_i = model.encode_tail(p, task, noisy)?;
                let flat_i = model.transfer_forward(p, task, z_i)?;
                displacement(tape, flat, flat_i)
            })();
            displacements.push(tagged("l_dis", d)?);
        }
    }
    Ok(TaskPass { z, flat, auto, displacements })
}

/// Graph tensors for one step: the target task's batch and normalized labels `[n × 1]`.
pub struct StepInput<'a> {
    pub batch: &'a GraphBatch,
    pub targets: &'a Tensor,
    /// Keys the perturbation noise of this step.
    pub perturbation_seed: u64,
}

/// The differentiable objective for one task's step plus its logged breakdown.
pub struct StepLoss {
    pub total: Var,
    pub l_reg: f64,
    pub pairs: Vec<PairLossBreakdown>,
}

/// Loss for one step on `task`'s batch.
///
/// Terms whose weight is zero are not evaluated (and logged as 0), so with
/// all alignment weights zero only the task's own regression unit is touched.
pub fn step_loss(
    model: &GateModel,
    p: &Bound<'_>,
    task: usize,
    partners: &[usize],
    input: &StepInput<'_>,
    weights: &LossWeights,
) -> Result<StepLoss, LossError> {
    let terms = Terms::from_weights(weights);
    let active = if terms.any() { partners } else { &[] };
    let (reg, pairs) = pair_terms(model, p, task, active, input, weights, terms)?;
    let tape = p.tape;
    let l_reg = tape.value(reg).item();
    if pairs.is_empty() {
        return Ok(StepLoss { total: reg, l_reg, pairs: Vec::new() });
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut total = reg;
    let mut breakdowns = Vec::with_capacity(pairs.len());
    for (source, vars) in pairs {
        let value = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
        let (l_auto, l_cons, l_map, l_dis) = (value(vars.auto), value(vars.cons), value(vars.map), value(vars.dis));
        breakdowns.push(PairLossBreakdown {
            target: task,
            source,
            l_reg,
            l_auto,
            l_cons,
            l_map,
            l_dis,
            l_tot: total_loss(l_reg, l_auto, l_cons, l_map, l_dis, weights),
        });
        for (v, w, name) in [
            (vars.auto, weights.alpha, "l_auto"),
            (vars.cons, weights.beta, "l_cons"),
            (vars.map, weights.gamma, "l_map"),
            (vars.dis, weights.delta, "l_dis"),
        ] {
            if let Some(v) = v {
                let weighted = tagged(name, tape.scale(v, w * scale))?;
                total = tagged(name, tape.add(total, weighted))?;
            }
        }
    }
    Ok(StepLoss { total, l_reg, pairs: breakdowns })
}

/// Tape nodes of every term for one pair.
#[derive(Debug, Clone, Copy)]
pub struct PairTermVars {
    pub reg: Var,
    pub auto: Option<Var>,
    pub cons: Option<Var>,
    pub map: Option<Var>,
    pub dis: Option<Var>,
}

/// All five terms for `(target, source)`, regardless of weights.
///
/// This is the full encoder → transfer → loss path used by gradient checks.
pub fn pair_loss_terms(
    model: &GateModel,
    p: &Bound<'_>,
    target: usize,
    source: usize,
    input: &StepInput<'_>,
    weights: &LossWeights,
) -> Result<PairTermVars, LossError> {
    let (reg, mut pairs) = pair_terms(model, p, target, &[source], input, weights, Terms::ALL)?;
    let (_, vars) = pairs.pop().expect("one source yields one pair");
    Ok(PairTermVars { reg, ..vars })
}

fn pair_terms(
    model: &GateModel,
    p: &Bound<'_>,
    task: usize,
    partners: &[usize],
    input: &StepInput<'_>,
    weights: &LossWeights,
    terms: Terms,
) -> Result<(Var, Vec<(usize, PairTermVars)>), LossError> {
    let tape = p.tape;
    let n = input.batch.graph_count;
    if input.targets.rows() != n || input.targets.cols() != 1 {
        return Err(LossError::Shape(format!(
            "targets have shape {:?}, batch has {n} molecules",
            input.targets.shape()
        )));
    }
    let y = tape.constant(input.targets.clone())?;
    let embedding = tagged("l_reg", model.embed(p, task, input.batch))?;

    if partners.is_empty() {
        let z = tagged("l_reg", model.encode_tail(p, task, embedding))?;
        let y_hat = tagged("l_reg", model.predict(p, task, z))?;
        let reg = tagged("l_reg", regression_loss(tape, y, y_hat))?;
        return Ok((reg, Vec::new()));
    }

    let offsets = if terms.dis {
        perturbation_offsets(n, model.dims().hidden, weights.perturbations, weights.sigma, input.perturbation_seed)?
    } else {
        Vec::new()
    };
    let own = task_pass(model, p, task, embedding, &offsets, terms)?;
    let y_hat = tagged("l_reg", model.predict(p, task, own.z))?;
    let reg = tagged("l_reg", regression_loss(tape, y, y_hat))?;

    let mut out = Vec::with_capacity(partners.len());
    for &source in partners {
        let e_src = tagged("l_cons", model.embed(p, source, input.batch))?;
        let other = task_pass(model, p, source, e_src, &offsets, terms)?;
        let auto = match (own.auto, other.auto) {
            (Some(a), Some(b)) => Some(tagged("l_auto", tape.add(a, b))?),
            _ => None,
        };
        let cons = if terms.cons {
            Some(tagged("l_cons", consistency_loss(tape, own.flat, &[other.flat]))?)
        } else {
            None
        };
        let map = if terms.map {
            let r = (|| -> Result<Var, LossError> {
                let carried = model.transfer_inverse(p, task, other.flat)?;
                let y_cross = model.predict(p, task, carried)?;
                mapping_loss(tape, y, &[y_cross])
            })();
            Some(tagged("l_map", r)?)
        } else {
            None
        };
        let dis = if terms.dis {
            let r = distance_loss(tape, &own.displacements, &[(&other.displacements, weights.ratio(task, source))]);
            Some(tagged("l_dis", r)?)
        } else {
            None
        };
        out.push((source, PairTermVars { reg, auto, cons, map, dis }));
    }
    Ok((reg, out))
}

/// Seed for the perturbation noise of one optimizer step.
pub fn perturbation_seed(seed: u64, fold: usize, step: u64) -> u64 {
    hash::key(&[seed, 0xD15, fold as u64, step])
}

#[cfg(test)]
mod tests;
