//! Finite-difference verification of every loss term through the full
//! encoder → transfer → loss path.
//!
//! A central difference resolves a derivative to about
//! `ulp(f)/2ε + ε²·|f‴|/6`. At freshly initialized weights the losses are
//! near 1 and the rounding part alone pushes coordinates with gradients
//! below ~1e-6 past a 1e-4 relative tolerance at `ε = 1e-5`. At a fully
//! fitted optimum the gradients vanish while the truncation part does not.
//! The check therefore runs after a short warm-up of the full objective,
//! which leaves the losses between those extremes. The checker itself is
//! unchanged.
//!
//! Central differences are meaningless across a ReLU kink, and descent tends
//! to park some pre-activations right at one. A warmed-up point with any
//! ReLU input closer than `kink_margin` to zero is rejected and a new point
//! is drawn from the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::diff::{finite_diff_check, Adam, AdamConfig, Tape, Tensor, Var};
use crate::featurize::{batch_graphs, GraphBatch};
use crate::hash;
use crate::losses::{pair_loss_terms, step_loss, LossError, LossWeights, PairTermVars, StepInput};
use crate::model::{Bound, EncoderSharing, GateModel, ModelDims};
use crate::smiles::parse_smiles;

pub const LOSS_TERMS: [&str; 5] = ["l_reg", "l_auto", "l_cons", "l_map", "l_dis"];

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSetup {
    pub dims: ModelDims,
    pub smiles: Vec<String>,
    pub weights: LossWeights,
    pub warmup_steps: usize,
    pub warmup_lr: f64,
    pub eps: f64,
    pub kink_margin: f64,
    pub max_points: usize,
}

impl Default for GradcheckSetup {
    fn default() -> Self {
        Self {
            dims: ModelDims { hidden: 4, latent: 3, rounds: 2, tail_layers: 2, head_layers: 2, transfer_layers: 2 },
            smiles: vec!["CC(=O)O".into(), "c1ccncc1".into()],
            weights: LossWeights { sigma: 0.1, ..LossWeights::default() },
            warmup_steps: 100,
            warmup_lr: 1e-2,
            eps: 1e-5,
            kink_margin: 1e-3,
            max_points: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermCheck {
    pub term: &'static str,
    pub value: f64,
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    /// Warmed-up points rejected for lying near a ReLU kink.
    pub rejected_points: usize,
}

fn pick(term: usize, v: &PairTermVars) -> Var {
    match term {
        0 => v.reg,
        1 => v.auto.expect("all terms evaluated"),
        2 => v.cons.expect("all terms evaluated"),
        3 => v.map.expect("all terms evaluated"),
        _ => v.dis.expect("all terms evaluated"),
    }
}

struct Point {
    model: GateModel,
    targets: Vec<Tensor>,
    perturbation_seed: u64,
}

/// A two-task model and targets drawn from `seed`, after the warm-up.
fn warm_point(setup: &GradcheckSetup, batch: &GraphBatch, seed: u64) -> Result<Point, LossError> {
    let names = vec!["task0".to_string(), "task1".to_string()];
    let mut model = GateModel::new(&names, setup.dims, EncoderSharing::PerTask, seed)?;
    let n = batch.graph_count;
    let targets: Vec<Tensor> = (0..2u64)
        .map(|task| {
            let mut rng = ChaCha8Rng::seed_from_u64(hash::key(&[seed, task]));
            let y = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            Tensor::matrix(n, 1, y)
        })
        .collect();
    let perturbation_seed = hash::key(&[seed, 0x9C]);

    let mut adam = Adam::new(AdamConfig { lr: setup.warmup_lr, ..AdamConfig::default() }, model.params.tensors());
    for _ in 0..setup.warmup_steps {
        let tape = Tape::new();
        let p = Bound::new(&tape, &model.params)?;
        let mut total = None;
        for (task, source) in [(0, 1), (1, 0)] {
            let input = StepInput { batch, targets: &targets[task], perturbation_seed };
            let step = step_loss(&model, &p, task, &[source], &input, &setup.weights)?;
            total = Some(match total {
                None => step.total,
                Some(t) => tape.add(t, step.total)?,
            });
        }
        let grads = tape.backward(total.expect("two tasks"))?;
        let updates: Vec<Option<Tensor>> = p.vars().iter().map(|&v| grads.get(v).cloned()).collect();
        adam.step(model.params.tensors_mut(), &updates);
    }
    Ok(Point { model, targets, perturbation_seed })
}

/// Checks the five terms of pair (task 0, task 1) for a two-task model built from `seed`.
pub fn check_loss_gradients(setup: &GradcheckSetup, seed: u64) -> Result<Vec<TermCheck>, LossError> {
    let graphs = setup
        .smiles
        .iter()
        .map(|s| parse_smiles(s).map_err(|e| LossError::Shape(format!("gradcheck molecule {s:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let batch = batch_graphs(&graphs).map_err(|e| LossError::Shape(e.to_string()))?;

    let mut rejected = 0;
    let point = loop {
        let point_seed = if rejected == 0 { seed } else { hash::key(&[seed, 0x4B1, rejected as u64]) };
        let point = warm_point(setup, &batch, point_seed)?;
        let margin = {
            let tape = Tape::new();
            let p = Bound::new(&tape, &point.model.params)?;
            let input = StepInput { batch: &batch, targets: &point.targets[0], perturbation_seed: point.perturbation_seed };
            pair_loss_terms(&point.model, &p, 0, 1, &input, &setup.weights)?;
            tape.relu_margin()
        };
        if margin.is_none_or(|m| m >= setup.kink_margin) {
            break point;
        }
        rejected += 1;
        if rejected == setup.max_points {
            return Err(LossError::Shape(format!(
                "no point among {rejected} stays {} away from every ReLU kink",
                setup.kink_margin
            )));
        }
    };

    let Point { model, targets, perturbation_seed } = point;
    let input = StepInput { batch: &batch, targets: &targets[0], perturbation_seed };
    let mut out = Vec::with_capacity(LOSS_TERMS.len());
    for (k, term) in LOSS_TERMS.iter().enumerate() {
        let value = {
            let tape = Tape::new();
            let p = Bound::new(&tape, &model.params)?;
            let v = pick(k, &pair_loss_terms(&model, &p, 0, 1, &input, &setup.weights)?);
            let x = tape.value(v).item();
            x
        };
        let report = finite_diff_check(model.params.tensors(), setup.eps, |tape, vars| {
            let p = Bound::from_vars(tape, vars.to_vec());
            Ok::<_, LossError>(pick(k, &pair_loss_terms(&model, &p, 0, 1, &input, &setup.weights)?))
        })?;
        out.push(TermCheck {
            term,
            value,
            max_rel_error: report.max_rel_error,
            worst_param: report.worst.map(|(i, _)| model.params.names()[i].clone()),
            rejected_points: rejected,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warm_start_keeps_losses_small_and_gradients_exact() {
        let checks = check_loss_gradients(&GradcheckSetup::default(), 3).unwrap();
        assert_eq!(checks.len(), 5);
        for c in &checks {
            assert!(c.value >= 0.0 && c.value < 1.0, "{c:?}");
            assert!(c.max_rel_error < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn points_near_a_kink_are_redrawn() {
        // this seed's warm-up parks a first-layer pre-activation within 1e-6 of zero
        const SEED: u64 = 13556563848064913539;
        let kinked = check_loss_gradients(&GradcheckSetup { kink_margin: 0.0, ..GradcheckSetup::default() }, SEED).unwrap();
        assert!(kinked.iter().any(|c| c.max_rel_error > 0.5));
        let checks = check_loss_gradients(&GradcheckSetup::default(), SEED).unwrap();
        assert!(checks[0].rejected_points >= 1);
        assert!(checks.iter().all(|c| c.max_rel_error < 1e-4), "{checks:?}");
    }

    #[test]
    fn cold_start_agrees_at_a_wider_step() {
        let setup = GradcheckSetup { warmup_steps: 0, eps: 1e-4, ..GradcheckSetup::default() };
        for c in check_loss_gradients(&setup, 8).unwrap() {
            assert!(c.max_rel_error < 1e-4, "{c:?}");
        }
    }
}
