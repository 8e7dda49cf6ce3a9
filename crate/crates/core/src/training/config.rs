//! Training configuration and the flat TOML run file.
//!
//! Run file keys (all optional except `datasets`):
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `mode` | `"gate"` | `"stl"`, `"mtl"` or `"gate"` |
//! | `datasets` | | CSV paths, one per task, relative to the run file |
//! | `task_names` | file stems | names used in reports |
//! | `seed` | 0 | seeds initialization, splits, shuffles and noise |
//! | `epochs`, `patience`, `batch_size` | 200, 30, 32 | |
//! | `folds`, `test_fraction` | 4, 0.2 | cross-validation folds and scaffold test share |
//! | `lr`, `beta1`, `beta2`, `adam_epsilon` | 1e-3, 0.9, 0.999, 1e-8 | Adam |
//! | `alpha`, `beta`, `gamma`, `delta` | 1, 1, 0.5, 0.5 | loss weights |
//! | `distance_ratio` | 1 | default `C` |
//! | `distance_ratios` | `""` | overrides, e.g. `"logp>solubility=2, solubility>logp=0.5"` |
//! | `perturbations`, `sigma` | 4, 0.01 | `M` and noise scale |
//! | `pairing` | `"all_pairs"` | or `"star"` |
//! | `target_task` | first task | name of the star centre |
//! | `hidden`, `latent`, `rounds` | 64, 32, 3 | |
//! | `tail_layers`, `head_layers`, `transfer_layers` | 2, 2, 2 | |
//! | `out_dir` | `"out"` | report directory, relative to the run file |
//! | `checkpoint` | `"<out_dir>/model.json"` | |
//! | `step_log` | true | write the per-step loss breakdown as JSON lines |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::diff::AdamConfig;
use crate::losses::{LossWeights, Pairing};
use crate::model::ModelDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Independent per-task models.
    Stl,
    /// Shared encoder, per-task heads.
    Mtl,
    /// Per-task models aligned through transfer modules.
    Gate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Stl => "stl",
            Mode::Mtl => "mtl",
            Mode::Gate => "gate",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stl" => Ok(Mode::Stl),
            "mtl" => Ok(Mode::Mtl),
            "gate" => Ok(Mode::Gate),
            other => Err(TrainError::Config(format!("unknown mode {other:?} (expected stl, mtl or gate)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    /// Epochs without a better validation score before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub test_fraction: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub pairing: Pairing,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Gate,
            seed: 0,
            epochs: 200,
            patience: 30,
            batch_size: 32,
            folds: 4,
            test_fraction: 0.2,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            pairing: Pairing::AllPairs,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, task_count: usize) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        match self.mode {
            Mode::Stl if task_count < 1 => return bad("STL needs at least one dataset".into()),
            Mode::Mtl | Mode::Gate if task_count < 2 => {
                return bad(format!("{} needs at least two datasets", self.mode.name()))
            }
            _ => {}
        }
        for (name, v) in [("epochs", self.epochs), ("patience", self.patience), ("batch_size", self.batch_size)] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 0.5) {
            return bad(format!("test_fraction must lie in (0, 0.5), got {}", self.test_fraction));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite() && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return bad("Adam needs lr > 0, beta1 and beta2 in [0, 1), epsilon > 0".into());
        }
        self.weights.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if self.weights.distance_ratios.keys().any(|&(t, s)| t >= task_count || s >= task_count || t == s) {
            return bad("distance ratio refers to an unknown task pair".into());
        }
        if let Pairing::Star(t) = self.pairing {
            if t >= task_count {
                return bad(format!("star target {t} out of range for {task_count} tasks"));
            }
        }
        self.dims.validate().map_err(|e| TrainError::Config(e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    mode: Option<String>,
    datasets: Vec<String>,
    task_names: Option<Vec<String>>,
    seed: Option<u64>,
    epochs: Option<usize>,
    patience: Option<usize>,
    batch_size: Option<usize>,
    folds: Option<usize>,
    test_fraction: Option<f64>,
    lr: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    adam_epsilon: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    delta: Option<f64>,
    distance_ratio: Option<f64>,
    distance_ratios: Option<String>,
    perturbations: Option<usize>,
    sigma: Option<f64>,
    pairing: Option<String>,
    target_task: Option<String>,
    hidden: Option<usize>,
    latent: Option<usize>,
    rounds: Option<usize>,
    tail_layers: Option<usize>,
    head_layers: Option<usize>,
    transfer_layers: Option<usize>,
    out_dir: Option<String>,
    checkpoint: Option<String>,
    step_log: Option<bool>,
}

/// A parsed run file: training configuration plus inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// `(task name, CSV path)` in task order.
    pub datasets: Vec<(String, PathBuf)>,
    pub out_dir: PathBuf,
    /// Explicit checkpoint path; defaults to `<out_dir>/model.json`.
    pub checkpoint: Option<PathBuf>,
    pub step_log: bool,
}

fn parse_ratios(text: &str, names: &[String]) -> Result<BTreeMap<(usize, usize), f64>, TrainError> {
    let index = |n: &str| {
        names.iter().position(|x| x == n).ok_or_else(|| TrainError::Config(format!("distance_ratios: unknown task {n:?}")))
    };
    let mut out = BTreeMap::new();
    for entry in text.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let malformed = || TrainError::Config(format!("distance_ratios: expected `target>source=C`, found {entry:?}"));
        let (pair, c) = entry.split_once('=').ok_or_else(malformed)?;
        let (t, s) = pair.split_once('>').ok_or_else(malformed)?;
        let c: f64 = c.trim().parse().map_err(|_| malformed())?;
        out.insert((index(t.trim())?, index(s.trim())?), c);
    }
    Ok(out)
}

impl RunConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.json"))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            TrainError::Config(m) => TrainError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses a run file; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, TrainError> {
        let f: RunFile = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let paths: Vec<PathBuf> = f.datasets.iter().map(|p| resolve(p)).collect();
        let names = match f.task_names {
            Some(n) if n.len() != paths.len() => {
                return Err(TrainError::Config(format!("{} task names for {} datasets", n.len(), paths.len())))
            }
            Some(n) => n,
            None => paths
                .iter()
                .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
                .collect(),
        };
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(TrainError::Config(format!("duplicate task name {n:?}")));
            }
        }

        let d = TrainConfig::default();
        let (da, dw, dd) = (d.adam, d.weights.clone(), d.dims);
        let pairing = match f.pairing.as_deref().unwrap_or("all_pairs") {
            "all_pairs" => Pairing::AllPairs,
            "star" => {
                let target = match &f.target_task {
                    Some(t) => names
                        .iter()
                        .position(|n| n == t)
                        .ok_or_else(|| TrainError::Config(format!("target_task {t:?} is not a task name")))?,
                    None => 0,
                };
                Pairing::Star(target)
            }
            other => return Err(TrainError::Config(format!("unknown pairing {other:?} (expected all_pairs or star)"))),
        };
        let train = TrainConfig {
            mode: f.mode.as_deref().unwrap_or("gate").parse()?,
            seed: f.seed.unwrap_or(d.seed),
            epochs: f.epochs.unwrap_or(d.epochs),
            patience: f.patience.unwrap_or(d.patience),
            batch_size: f.batch_size.unwrap_or(d.batch_size),
            folds: f.folds.unwrap_or(d.folds),
            test_fraction: f.test_fraction.unwrap_or(d.test_fraction),
            adam: AdamConfig {
                lr: f.lr.unwrap_or(da.lr),
                beta1: f.beta1.unwrap_or(da.beta1),
                beta2: f.beta2.unwrap_or(da.beta2),
                epsilon: f.adam_epsilon.unwrap_or(da.epsilon),
            },
            weights: LossWeights {
                alpha: f.alpha.unwrap_or(dw.alpha),
                beta: f.beta.unwrap_or(dw.beta),
                gamma: f.gamma.unwrap_or(dw.gamma),
                delta: f.delta.unwrap_or(dw.delta),
                distance_ratios: parse_ratios(f.distance_ratios.as_deref().unwrap_or(""), &names)?,
                default_ratio: f.distance_ratio.unwrap_or(dw.default_ratio),
                perturbations: f.perturbations.unwrap_or(dw.perturbations),
                sigma: f.sigma.unwrap_or(dw.sigma),
            },
            pairing,
            dims: ModelDims {
                hidden: f.hidden.unwrap_or(dd.hidden),
                latent: f.latent.unwrap_or(dd.latent),
                rounds: f.rounds.unwrap_or(dd.rounds),
                tail_layers: f.tail_layers.unwrap_or(dd.tail_layers),
                head_layers: f.head_layers.unwrap_or(dd.head_layers),
                transfer_layers: f.transfer_layers.unwrap_or(dd.transfer_layers),
            },
        };
        train.validate(names.len())?;
        let out_dir = resolve(f.out_dir.as_deref().unwrap_or("out"));
        let checkpoint = f.checkpoint.as_deref().map(resolve);
        Ok(Self {
            train,
            datasets: names.into_iter().zip(paths).collect(),
            out_dir,
            checkpoint,
            step_log: f.step_log.unwrap_or(true),
        })
    }
}
