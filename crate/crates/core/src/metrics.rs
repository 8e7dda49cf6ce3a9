//! RMSE, Pearson correlation, relative-improvement tables and run reports.
//!
//! Report files: `<stem>.json` holds the full [`RunReport`]; `<stem>.csv`
//! is a flat `task,fold,rmse,pearson,validation_rmse,best_epoch` table with
//! one row per task and fold. An undefined Pearson value is written as
//! `null` in JSON and as an empty CSV field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("arrays differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("correlation is undefined for constant input")]
    Constant,
    #[error("non-finite input")]
    NonFinite,
}

fn check(y: &[f64], y_hat: &[f64], needed: usize) -> Result<(), MetricError> {
    if y.len() != y_hat.len() {
        return Err(MetricError::Length(y.len(), y_hat.len()));
    }
    if y.len() < needed {
        return Err(MetricError::TooShort { needed, got: y.len() });
    }
    if y.iter().chain(y_hat).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check(y, y_hat, 1)?;
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

pub fn pearson(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check(y, y_hat, 2)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = y_hat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(y_hat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Test metrics of one task on one fold's model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub task: String,
    pub fold: usize,
    pub rmse: f64,
    /// `None` when predictions or targets are constant.
    pub pearson: Option<f64>,
    pub validation_rmse: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub mean_rmse: f64,
    /// `None` when any fold's correlation is undefined.
    pub mean_pearson: Option<f64>,
    pub folds: usize,
}

/// One epoch of one fold: mean training loss and validation RMSE per task
/// (normalized units), and the model-selection score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    /// `None` for a task that took no step this epoch.
    pub train_loss: Vec<Option<f64>>,
    pub validation_rmse: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: String,
    pub tasks: Vec<String>,
    pub folds: usize,
    pub config: serde_json::Value,
    pub metrics: Vec<FoldMetrics>,
    pub summary: Vec<TaskSummary>,
    pub history: Vec<EpochRecord>,
    /// File holding the per-step loss breakdown, if one was written.
    pub loss_log: Option<String>,
}

impl RunReport {
    /// Sorts metrics by (fold, task order) and recomputes the per-task means.
    pub fn new(
        mode: impl Into<String>,
        tasks: Vec<String>,
        folds: usize,
        config: serde_json::Value,
        mut metrics: Vec<FoldMetrics>,
        mut history: Vec<EpochRecord>,
    ) -> Self {
        let order = |name: &str| tasks.iter().position(|t| t == name).unwrap_or(usize::MAX);
        metrics.sort_by(|a, b| (a.fold, order(&a.task)).cmp(&(b.fold, order(&b.task))));
        history.sort_by_key(|e| (e.fold, e.epoch));
        let summary = tasks
            .iter()
            .map(|task| {
                let rows: Vec<&FoldMetrics> = metrics.iter().filter(|m| &m.task == task).collect();
                let n = rows.len().max(1) as f64;
                let mean_pearson = rows
                    .iter()
                    .map(|m| m.pearson)
                    .collect::<Option<Vec<f64>>>()
                    .filter(|v| !v.is_empty())
                    .map(|v| v.iter().sum::<f64>() / n);
                TaskSummary {
                    task: task.clone(),
                    mean_rmse: rows.iter().map(|m| m.rmse).sum::<f64>() / n,
                    mean_pearson,
                    folds: rows.len(),
                }
            })
            .collect();
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            mode: mode.into(),
            tasks,
            folds,
            config,
            metrics,
            summary,
            history,
            loss_log: None,
        }
    }

    pub fn task_summary(&self, task: &str) -> Option<&TaskSummary> {
        self.summary.iter().find(|s| s.task == task)
    }
}

/// Per-task change of `a` relative to `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub task: String,
    /// `100·(pearson_a − pearson_b)/pearson_b`.
    pub pearson_change_pct: Option<f64>,
    /// `100·(rmse_b − rmse_a)/rmse_b`: positive when `a` has the lower error.
    pub rmse_reduction_pct: f64,
    /// Set when `a` is worse than `b` on Pearson (on RMSE when Pearson is undefined).
    pub negative_transfer: bool,
}

/// Relative improvement of `a` over `b` for every task the two reports share.
pub fn improvement_table(a: &RunReport, b: &RunReport) -> Vec<Improvement> {
    a.summary
        .iter()
        .filter_map(|sa| {
            let sb = b.task_summary(&sa.task)?;
            let pearson_change_pct = match (sa.mean_pearson, sb.mean_pearson) {
                (Some(pa), Some(pb)) if pb != 0.0 => Some(100.0 * (pa - pb) / pb),
                _ => None,
            };
            let rmse_reduction_pct =
                if sb.mean_rmse == 0.0 { 0.0 } else { 100.0 * (sb.mean_rmse - sa.mean_rmse) / sb.mean_rmse };
            let negative_transfer = match pearson_change_pct {
                Some(p) => p < 0.0,
                None => rmse_reduction_pct < 0.0,
            };
            Some(Improvement { task: sa.task.clone(), pearson_change_pct, rmse_reduction_pct, negative_transfer })
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unsupported report schema version {0}")]
    Schema(u32),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.csv`, returning both paths.
pub fn emit_report(report: &RunReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json_path = dir.join(format!("{stem}.json"));
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(&json_path, text).map_err(io_err(&json_path))?;

    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["task", "fold", "rmse", "pearson", "validation_rmse", "best_epoch"])?;
    for m in &report.metrics {
        w.write_record([
            m.task.clone(),
            m.fold.to_string(),
            m.rmse.to_string(),
            m.pearson.map(|p| p.to_string()).unwrap_or_default(),
            m.validation_rmse.to_string(),
            m.best_epoch.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    Ok((json_path, csv_path))
}

pub fn read_report(path: &Path) -> Result<RunReport, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let report: RunReport = serde_json::from_str(&text)?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(ReportError::Schema(report.schema_version));
    }
    Ok(report)
}
