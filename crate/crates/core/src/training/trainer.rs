use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use super::data::{fit_normalization, TaskDataset};
use super::split::SplitPlan;
use super::TrainError;
use crate::diff::{Adam, Tape, Tensor};
use crate::featurize::batch_graphs;
use crate::hash;
use crate::losses::{perturbation_seed, step_loss, LossError, LossWeights, StepInput};
use crate::metrics::{pearson, rmse, EpochRecord, FoldMetrics, RunReport};
use crate::model::{Bound, EncoderSharing, GateModel, ModelError, ParamStore};

const EVAL_CHUNK: usize = 256;

/// One line of the step log: the loss breakdown of one pair (or of the
/// regression term alone when no alignment pair was evaluated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub fold: usize,
    pub epoch: usize,
    pub step: u64,
    pub task: usize,
    pub source: Option<usize>,
    pub l_reg: f64,
    pub l_auto: f64,
    pub l_cons: f64,
    pub l_map: f64,
    pub l_dis: f64,
    pub l_tot: f64,
}

/// Per-task split seeds are keyed by task name, so a task gets the same
/// split whichever subset of tasks it is trained with.
fn task_key(seed: u64, name: &str) -> u64 {
    let words: Vec<u64> = [seed, 0x5B117].into_iter().chain(name.bytes().map(u64::from)).collect();
    hash::key(&words)
}

pub fn split_plans(config: &TrainConfig, datasets: &[TaskDataset]) -> Result<Vec<SplitPlan>, TrainError> {
    datasets
        .iter()
        .map(|ds| {
            SplitPlan::new(ds, config.test_fraction, config.folds, task_key(config.seed, &ds.name))
                .map_err(|e| TrainError::Data(format!("{}: {e}", ds.name)))
        })
        .collect()
}

/// Tasks that share one model-selection decision. STL tasks are independent
/// models and are selected and stopped separately; MTL and GATE select one
/// parameter state for all tasks.
#[derive(Debug, Clone)]
struct SelectionGroup {
    tasks: Vec<usize>,
    best_score: f64,
    best_epoch: usize,
    best_validation: Vec<f64>,
    snapshot: Option<ParamStore>,
    stale: usize,
    stopped: bool,
}

/// The optimization state of one fold.
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    datasets: &'a [TaskDataset],
    fold: usize,
    pub model: GateModel,
    adam: Adam,
    weights: LossWeights,
    partners: Vec<Vec<usize>>,
    train: Vec<Vec<usize>>,
    validation: Vec<Vec<usize>>,
    step: u64,
    epoch: usize,
    groups: Vec<SelectionGroup>,
}

impl<'a> Trainer<'a> {
    /// Builds the fold's model and fits target normalization on the fold's
    /// training molecules only.
    pub fn new(
        config: &'a TrainConfig,
        datasets: &'a [TaskDataset],
        plans: &[SplitPlan],
        fold: usize,
    ) -> Result<Self, TrainError> {
        config.validate(datasets.len())?;
        if plans.len() != datasets.len() || fold >= config.folds {
            return Err(TrainError::Config(format!("fold {fold} or split plans do not match the datasets")));
        }
        let names: Vec<String> = datasets.iter().map(|d| d.name.clone()).collect();
        let sharing = match config.mode {
            Mode::Mtl => EncoderSharing::Shared,
            Mode::Stl | Mode::Gate => EncoderSharing::PerTask,
        };
        let mut model = GateModel::new(&names, config.dims, sharing, hash::key(&[config.seed, fold as u64]))?;
        let (mut train, mut validation) = (Vec::new(), Vec::new());
        for (t, (ds, plan)) in datasets.iter().zip(plans).enumerate() {
            let (tr, va) = plan.fold(fold);
            model.normalization[t] =
                fit_normalization(&ds.values(&tr)).map_err(|e| TrainError::Data(format!("{}: {e}", ds.name)))?;
            train.push(tr);
            validation.push(va);
        }
        let (weights, partners) = match config.mode {
            Mode::Gate => {
                let k = datasets.len();
                (config.weights.clone(), (0..k).map(|t| config.pairing.partners(t, k)).collect())
            }
            Mode::Stl | Mode::Mtl => (LossWeights::regression_only(), vec![Vec::new(); datasets.len()]),
        };
        let group_tasks: Vec<Vec<usize>> = match config.mode {
            Mode::Stl => (0..datasets.len()).map(|t| vec![t]).collect(),
            Mode::Mtl | Mode::Gate => vec![(0..datasets.len()).collect()],
        };
        let groups = group_tasks
            .into_iter()
            .map(|tasks| SelectionGroup {
                tasks,
                best_score: f64::INFINITY,
                best_epoch: 0,
                best_validation: Vec::new(),
                snapshot: None,
                stale: 0,
                stopped: false,
            })
            .collect();
        let adam = Adam::new(config.adam, model.params.tensors());
        Ok(Self { config, datasets, fold, model, adam, weights, partners, train, validation, step: 0, epoch: 0, groups })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || self.groups.iter().all(|g| g.stopped)
    }

    fn task_active(&self, task: usize) -> bool {
        self.groups.iter().any(|g| !g.stopped && g.tasks.contains(&task))
    }

    /// The epoch's steps in order: each task's training indices shuffled and
    /// cut into batches, then interleaved round-robin across tasks.
    pub fn schedule(&self, epoch: usize) -> Vec<(usize, Vec<usize>)> {
        let per_task: Vec<Vec<Vec<usize>>> = self
            .train
            .iter()
            .enumerate()
            .map(|(t, idx)| {
                if !self.task_active(t) {
                    return Vec::new();
                }
                let mut order = idx.clone();
                let key = hash::key(&[self.config.seed, self.fold as u64, t as u64, epoch as u64]);
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
                order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect()
            })
            .collect();
        let rounds = per_task.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = Vec::new();
        for r in 0..rounds {
            for (t, batches) in per_task.iter().enumerate() {
                if let Some(b) = batches.get(r) {
                    out.push((t, b.clone()));
                }
            }
        }
        out
    }

    fn diverged(&self, term: impl Into<String>, detail: impl Into<String>) -> TrainError {
        TrainError::Diverged {
            term: term.into(),
            fold: self.fold,
            epoch: self.epoch,
            step: self.step,
            detail: detail.into(),
        }
    }

    /// One Adam update on `task`'s molecules `indices`.
    pub fn step(&mut self, task: usize, indices: &[usize]) -> Result<Vec<StepRecord>, TrainError> {
        let ds = &self.datasets[task];
        let batch = batch_graphs(indices.iter().map(|&i| &ds.graphs[i]))
            .map_err(|e| TrainError::Data(format!("{}: {e}", ds.name)))?;
        let norm = self.model.normalization[task];
        let y = Tensor::matrix(indices.len(), 1, indices.iter().map(|&i| norm.normalize(ds.records[i].value)).collect());
        let input = StepInput {
            batch: &batch,
            targets: &y,
            perturbation_seed: perturbation_seed(self.config.seed, self.fold, self.step),
        };
        let tape = Tape::new();
        let p = match Bound::new(&tape, &self.model.params) {
            Ok(p) => p,
            Err(e) => return Err(self.diverged("parameters", e.to_string())),
        };
        let loss = match step_loss(&self.model, &p, task, &self.partners[task], &input, &self.weights) {
            Ok(l) => l,
            Err(e @ LossError::NonFinite { .. }) => {
                return Err(self.diverged(e.term().unwrap_or("loss"), e.to_string()));
            }
            Err(e) => return Err(e.into()),
        };
        let grads = tape.backward(loss.total).map_err(ModelError::from)?;
        let updates: Vec<Option<Tensor>> = p.vars().iter().map(|&v| grads.get(v).cloned()).collect();
        if let Some(i) = updates.iter().position(|g| g.as_ref().is_some_and(|g| !g.is_finite())) {
            return Err(self.diverged("gradient", format!("non-finite gradient for {}", self.model.params.names()[i])));
        }
        self.adam.step(self.model.params.tensors_mut(), &updates);

        let (fold, epoch, step) = (self.fold, self.epoch, self.step);
        self.step += 1;
        if loss.pairs.is_empty() {
            let l = loss.l_reg;
            return Ok(vec![StepRecord {
                fold,
                epoch,
                step,
                task,
                source: None,
                l_reg: l,
                l_auto: 0.0,
                l_cons: 0.0,
                l_map: 0.0,
                l_dis: 0.0,
                l_tot: l,
            }]);
        }
        Ok(loss
            .pairs
            .iter()
            .map(|b| StepRecord {
                fold,
                epoch,
                step,
                task,
                source: Some(b.source),
                l_reg: b.l_reg,
                l_auto: b.l_auto,
                l_cons: b.l_cons,
                l_map: b.l_map,
                l_dis: b.l_dis,
                l_tot: b.l_tot,
            })
            .collect())
    }

    /// Head predictions for `indices` on the original target scale.
    pub fn predict(&self, task: usize, indices: &[usize]) -> Result<Vec<f64>, TrainError> {
        predict_graphs(&self.model, task, indices.iter().map(|&i| &self.datasets[task].graphs[i]).collect())
    }

    /// Validation RMSE per task in normalized units.
    pub fn validation_rmse(&self) -> Result<Vec<f64>, TrainError> {
        (0..self.datasets.len())
            .map(|t| {
                let idx = &self.validation[t];
                let norm = self.model.normalization[t];
                let pred: Vec<f64> = self.predict(t, idx)?.into_iter().map(|v| norm.normalize(v)).collect();
                let y: Vec<f64> = self.datasets[t].values(idx).into_iter().map(|v| norm.normalize(v)).collect();
                rmse(&y, &pred).map_err(|e| TrainError::Data(format!("{} validation: {e}", self.datasets[t].name)))
            })
            .collect()
    }

    /// Runs one epoch, updates model selection and early stopping, and
    /// returns the epoch's record.
    pub fn run_epoch(&mut self, log: &mut dyn FnMut(&StepRecord)) -> Result<EpochRecord, TrainError> {
        let k = self.datasets.len();
        let (mut sums, mut counts) = (vec![0.0; k], vec![0usize; k]);
        for (task, batch) in self.schedule(self.epoch) {
            let records = self.step(task, &batch)?;
            let total = records.iter().map(|r| r.l_tot).sum::<f64>() / records.len() as f64;
            sums[task] += total;
            counts[task] += 1;
            records.iter().for_each(&mut *log);
        }
        let validation = self.validation_rmse()?;
        if let Some(t) = validation.iter().position(|v| !v.is_finite()) {
            return Err(self.diverged("validation", format!("non-finite validation RMSE for {}", self.datasets[t].name)));
        }
        let score = validation.iter().sum::<f64>() / k as f64;
        let epoch = self.epoch;
        for g in self.groups.iter_mut().filter(|g| !g.stopped) {
            let s = g.tasks.iter().map(|&t| validation[t]).sum::<f64>() / g.tasks.len() as f64;
            if s < g.best_score {
                g.best_score = s;
                g.best_epoch = epoch;
                g.best_validation = g.tasks.iter().map(|&t| validation[t]).collect();
                g.snapshot = Some(self.model.params.clone());
                g.stale = 0;
            } else {
                g.stale += 1;
                g.stopped = g.stale >= self.config.patience;
            }
        }
        self.epoch += 1;
        let train_loss = sums.iter().zip(&counts).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect();
        Ok(EpochRecord { fold: self.fold, epoch, train_loss, validation_rmse: validation, score })
    }

    /// Restores each selection group's best parameters and returns the
    /// model with, per task, its validation RMSE and epoch at selection.
    pub fn into_best(mut self) -> (GateModel, Vec<(f64, usize)>) {
        let mut selected = vec![(f64::INFINITY, 0); self.datasets.len()];
        let whole = self.groups.len() == 1;
        for g in &self.groups {
            if let Some(snap) = &g.snapshot {
                if whole {
                    self.model.params = snap.clone();
                } else {
                    for &t in &g.tasks {
                        for id in self.model.regression_unit_param_ids(t) {
                            *self.model.params.get_mut(id) = snap.get(id).clone();
                        }
                    }
                }
            }
            for (j, &t) in g.tasks.iter().enumerate() {
                selected[t] = (g.best_validation.get(j).copied().unwrap_or(f64::INFINITY), g.best_epoch);
            }
        }
        (self.model, selected)
    }
}

/// Head predictions of `task` on the original target scale.
pub fn predict_graphs(
    model: &GateModel,
    task: usize,
    graphs: Vec<&crate::smiles::MolGraph>,
) -> Result<Vec<f64>, TrainError> {
    let norm = model.normalization[task];
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(EVAL_CHUNK) {
        let batch = batch_graphs(chunk.iter().copied()).map_err(|e| TrainError::Data(e.to_string()))?;
        let tape = Tape::new();
        let p = Bound::new(&tape, &model.params).map_err(ModelError::from)?;
        let z = model.encode(&p, task, &batch)?;
        let y = model.predict(&p, task, z)?;
        out.extend(tape.value(y).data().iter().map(|&v| norm.denormalize(v)));
    }
    Ok(out)
}

/// The trained model of the fold with the best validation score, plus the
/// report over all folds.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GateModel,
    pub report: RunReport,
}

pub fn train(config: &TrainConfig, datasets: &[TaskDataset]) -> Result<TrainOutcome, TrainError> {
    train_with_log(config, datasets, &mut |_| {})
}

/// `train`, passing every step's loss breakdown to `log`.
pub fn train_with_log(
    config: &TrainConfig,
    datasets: &[TaskDataset],
    log: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate(datasets.len())?;
    let plans = split_plans(config, datasets)?;
    let (mut metrics, mut history) = (Vec::new(), Vec::new());
    let mut best: Option<(f64, GateModel)> = None;
    for fold in 0..config.folds {
        let mut trainer = Trainer::new(config, datasets, &plans, fold)?;
        while !trainer.finished() {
            history.push(trainer.run_epoch(log)?);
        }
        let (model, selected) = trainer.into_best();
        for (t, ds) in datasets.iter().enumerate() {
            let test = &plans[t].test;
            let pred = predict_graphs(&model, t, test.iter().map(|&i| &ds.graphs[i]).collect())?;
            let y = ds.values(test);
            let r = rmse(&y, &pred).map_err(|e| TrainError::Data(format!("{} test: {e}", ds.name)))?;
            if !r.is_finite() {
                return Err(TrainError::Diverged {
                    term: "test".into(),
                    fold,
                    epoch: selected[t].1,
                    step: 0,
                    detail: format!("non-finite test RMSE for {}", ds.name),
                });
            }
            metrics.push(FoldMetrics {
                task: ds.name.clone(),
                fold,
                rmse: r,
                pearson: pearson(&y, &pred).ok(),
                validation_rmse: selected[t].0,
                best_epoch: selected[t].1,
            });
        }
        let score = selected.iter().map(|s| s.0).sum::<f64>() / selected.len() as f64;
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, model));
        }
    }
    let tasks = datasets.iter().map(|d| d.name.clone()).collect();
    let echo = serde_json::to_value(config).map_err(|e| TrainError::Config(e.to_string()))?;
    let report = RunReport::new(config.mode.name(), tasks, config.folds, echo, metrics, history);
    let (_, model) = best.expect("at least two folds");
    Ok(TrainOutcome { model, report })
}
