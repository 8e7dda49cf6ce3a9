//! Experiment matrices: several runs over subsets of the same datasets.

use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use super::data::TaskDataset;
use super::trainer::train;
use super::TrainError;
use crate::losses::Pairing;
use crate::metrics::RunReport;

/// One run of a matrix: a mode over a subset of the datasets (indices into
/// the full task list, in training order).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub label: String,
    pub mode: Mode,
    pub tasks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub runs: Vec<RunSpec>,
}

impl MatrixSpec {
    /// STL, MTL and GATE over all `task_count` tasks.
    pub fn modes(task_count: usize) -> Self {
        let tasks: Vec<usize> = (0..task_count).collect();
        let runs = [Mode::Stl, Mode::Mtl, Mode::Gate]
            .into_iter()
            .map(|mode| RunSpec { label: mode.name().to_string(), mode, tasks: tasks.clone() })
            .collect();
        Self { runs }
    }

    /// GATE on every pair of tasks and on the full set. `target` is listed
    /// first in every subset that contains it.
    pub fn subsets(task_count: usize, target: usize) -> Self {
        let ordered = |mut v: Vec<usize>| {
            v.sort_by_key(|&t| (t != target, t));
            v
        };
        let mut runs = Vec::new();
        for a in 0..task_count {
            for b in a + 1..task_count {
                runs.push(RunSpec { label: format!("pair-{a}-{b}"), mode: Mode::Gate, tasks: ordered(vec![a, b]) });
            }
        }
        runs.push(RunSpec { label: "full".into(), mode: Mode::Gate, tasks: ordered((0..task_count).collect()) });
        Self { runs }
    }
}

/// `base` restricted to `tasks`: distance ratios are re-indexed, and a star
/// centred on a task outside the subset falls back to all pairs.
pub fn subset_config(base: &TrainConfig, mode: Mode, tasks: &[usize]) -> TrainConfig {
    let local = |t: usize| tasks.iter().position(|&x| x == t);
    let mut c = base.clone();
    c.mode = mode;
    c.weights.distance_ratios = base
        .weights
        .distance_ratios
        .iter()
        .filter_map(|(&(t, s), &r)| Some(((local(t)?, local(s)?), r)))
        .collect();
    c.pairing = match base.pairing {
        Pairing::Star(t) => local(t).map_or(Pairing::AllPairs, Pairing::Star),
        Pairing::AllPairs => Pairing::AllPairs,
    };
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRun {
    pub spec: RunSpec,
    pub report: RunReport,
}

pub fn run_matrix(base: &TrainConfig, datasets: &[TaskDataset], spec: &MatrixSpec) -> Result<Vec<MatrixRun>, TrainError> {
    spec.runs
        .iter()
        .map(|run| {
            if let Some(&t) = run.tasks.iter().find(|&&t| t >= datasets.len()) {
                return Err(TrainError::Config(format!("run {}: task {t} out of range", run.label)));
            }
            let subset: Vec<TaskDataset> = run.tasks.iter().map(|&t| datasets[t].clone()).collect();
            let config = subset_config(base, run.mode, &run.tasks);
            let report = train(&config, &subset)?.report;
            Ok(MatrixRun { spec: run.clone(), report })
        })
        .collect()
}

/// Per-task test RMSE of the largest run next to the mean over the two-task
/// runs containing that task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub task: String,
    pub full_rmse: f64,
    pub pair_mean_rmse: f64,
    pub pairs: usize,
}

pub fn subset_summary(runs: &[MatrixRun]) -> Vec<SubsetRow> {
    let Some(full) = runs.iter().max_by_key(|r| r.spec.tasks.len()) else {
        return Vec::new();
    };
    full.report
        .summary
        .iter()
        .filter_map(|s| {
            let pair_rmse: Vec<f64> = runs
                .iter()
                .filter(|r| r.spec.tasks.len() == 2)
                .filter_map(|r| r.report.task_summary(&s.task).map(|p| p.mean_rmse))
                .collect();
            (!pair_rmse.is_empty()).then(|| SubsetRow {
                task: s.task.clone(),
                full_rmse: s.mean_rmse,
                pair_mean_rmse: pair_rmse.iter().sum::<f64>() / pair_rmse.len() as f64,
                pairs: pair_rmse.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{FoldMetrics, RunReport};

    #[test]
    fn subsets_runs_every_pair_and_the_full_set() {
        let m = MatrixSpec::subsets(3, 2);
        let tasks: Vec<&[usize]> = m.runs.iter().map(|r| r.tasks.as_slice()).collect();
        assert_eq!(tasks, vec![&[0, 1][..], &[2, 0], &[2, 1], &[2, 0, 1]]);
        assert!(m.runs.iter().all(|r| r.mode == Mode::Gate));
        assert_eq!(MatrixSpec::modes(4).runs.len(), 3);
    }

    #[test]
    fn subset_remaps_pairing_and_ratios() {
        let mut base = TrainConfig { pairing: Pairing::Star(2), ..TrainConfig::default() };
        base.weights.distance_ratios.insert((2, 0), 3.0);
        base.weights.distance_ratios.insert((1, 0), 5.0);
        let c = subset_config(&base, Mode::Gate, &[2, 0]);
        assert_eq!(c.pairing, Pairing::Star(0));
        assert_eq!(c.weights.ratio(0, 1), 3.0);
        assert_eq!(c.weights.distance_ratios.len(), 1);
        assert_eq!(subset_config(&base, Mode::Gate, &[0, 1]).pairing, Pairing::AllPairs);
    }

    fn report(tasks: &[&str], rmse: &[f64]) -> RunReport {
        let metrics = tasks
            .iter()
            .zip(rmse)
            .map(|(t, &r)| FoldMetrics {
                task: t.to_string(),
                fold: 0,
                rmse: r,
                pearson: None,
                validation_rmse: 0.0,
                best_epoch: 0,
            })
            .collect();
        RunReport::new("gate", tasks.iter().map(|t| t.to_string()).collect(), 1, serde_json::Value::Null, metrics, Vec::new())
    }

    #[test]
    fn subset_summary_averages_pairs() {
        let spec = MatrixSpec::subsets(3, 0);
        let reports = [report(&["a", "b"], &[1.0, 2.0]), report(&["a", "c"], &[3.0, 4.0]), report(&["b", "c"], &[5.0, 6.0])];
        let mut runs: Vec<MatrixRun> =
            spec.runs.iter().zip(reports).map(|(s, r)| MatrixRun { spec: s.clone(), report: r }).collect();
        runs.push(MatrixRun { spec: spec.runs[3].clone(), report: report(&["a", "b", "c"], &[0.5, 1.5, 2.5]) });
        let rows = subset_summary(&runs);
        assert_eq!(rows[0], SubsetRow { task: "a".into(), full_rmse: 0.5, pair_mean_rmse: 2.0, pairs: 2 });
        assert_eq!(rows[1].pair_mean_rmse, 3.5);
        assert_eq!(rows[2].pair_mean_rmse, 5.0);
    }
}
