//! `gate`: SMILES inspection, scaffold splits, synthetic data, training,
//! evaluation and gradient checks.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 configuration or usage error,
//! 3 data error, 4 numerical failure (divergence or a failed gradient check).

mod error;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use error::CliError;
use gate_core::gradcheck::{check_loss_gradients, GradcheckSetup, LOSS_TERMS};
use gate_core::losses::Pairing;
use gate_core::metrics::{emit_report, improvement_table, pearson, rmse};
use gate_core::model::{load_checkpoint, save_checkpoint};
use gate_core::smiles::{canonical_key, extract_scaffold, parse_smiles, MolGraph};
use gate_core::synth::{generate, write_synthetic, SyntheticSpec};
use gate_core::training::{
    subset_summary, predict_graphs, run_matrix, scaffold_keys, scaffold_split, train_with_log, write_csv, MatrixSpec,
    Mode, RunConfig, TaskDataset,
};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "gate", version, about = "Geometrically aligned transfer encoders for molecular property regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixKind {
    /// STL, MTL and GATE over all tasks.
    Modes,
    /// GATE on every task pair and on the full task set.
    Subsets,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a SMILES string and print its graph as JSON.
    Parse { smiles: String },
    /// Print the scaffold of a SMILES string and its canonical key as JSON.
    Scaffold { smiles: String },
    /// Scaffold-split a `smiles,value` CSV into train.csv and test.csv.
    Split {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a run file; writes the checkpoint, report and step log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// stl, mtl or gate
        #[arg(long)]
        mode: Option<String>,
        /// all_pairs, star or star:<task>
        #[arg(long)]
        pairing: Option<String>,
        /// Report directory (overrides the run file).
        #[arg(long, env = "GATE_REPORT_DIR")]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a labeled CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Task name in the checkpoint; defaults to the only task or the CSV file stem.
        #[arg(long)]
        task: Option<String>,
        /// Write the metrics JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every loss term; fails if any error reaches 1e-4.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds to check.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Generate synthetic multi-task CSVs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        tasks: usize,
        #[arg(long, default_value_t = 400)]
        molecules: usize,
        #[arg(long, default_value_t = 6)]
        descriptors: usize,
        #[arg(long, default_value_t = 0.2)]
        target_fraction: f64,
        /// Share of molecules each non-target task labels.
        #[arg(long, default_value_t = 1.0)]
        source_fraction: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
    /// Run an experiment matrix over the run file's datasets.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = MatrixKind::Modes)]
        kind: MatrixKind,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pairing: Option<String>,
        #[arg(long, env = "GATE_REPORT_DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Parse { smiles } => {
            let g = parse(&smiles)?;
            print_json(&graph_json(&g))
        }
        Command::Scaffold { smiles } => {
            let g = parse(&smiles)?;
            let s = extract_scaffold(&g);
            print_json(&json!({ "smiles": smiles, "key": canonical_key(&s), "scaffold": graph_json(&s) }))
        }
        Command::Split { csv, fraction, seed, out } => split(&csv, fraction, seed, &out),
        Command::Train { config, seed, mode, pairing, out } => train(&config, seed, mode, pairing, out),
        Command::Eval { checkpoint, csv, task, out } => eval(&checkpoint, &csv, task, out),
        Command::Gradcheck { seed, seeds } => gradcheck(seed, seeds),
        Command::Synth { out, seed, tasks, molecules, descriptors, target_fraction, source_fraction, noise } => {
            let spec = SyntheticSpec {
                n_tasks: tasks,
                n_molecules: molecules,
                descriptor_dim: descriptors,
                target_data_fraction: target_fraction,
                source_data_fraction: source_fraction,
                noise_std: noise,
                seed,
            };
            let data = generate(&spec)?;
            let paths = write_synthetic(&spec, &data, &out)?;
            let files: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            print_json(&json!({ "files": files, "rows": data.tasks.iter().map(|t| t.records.len()).collect::<Vec<_>>() }))
        }
        Command::Matrix { config, kind, seed, pairing, out } => matrix(&config, kind, seed, pairing, out),
    }
}

fn parse(smiles: &str) -> Result<MolGraph, CliError> {
    parse_smiles(smiles).map_err(|e| CliError::Data(format!("{smiles:?}: {e}")))
}

fn graph_json(g: &MolGraph) -> Value {
    json!({
        "smiles": g.source_text(),
        "heavy_atoms": g.atom_count(),
        "bonds": g.bond_count(),
        "rings": g.ring_count(),
        "ring_atoms": g.ring_atom_count(),
        "aromatic_atoms": g.atoms().iter().filter(|a| a.aromatic).count(),
        "total_h": g.atoms().iter().map(|a| u32::from(a.total_h())).sum::<u32>(),
        "graph": g,
    })
}

fn print_json(v: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Data(e.to_string()))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("standard output: {e}"))),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn split(csv: &Path, fraction: f64, seed: u64, out: &Path) -> Result<(), CliError> {
    let name = csv.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    let ds = TaskDataset::load_csv(csv, name)?;
    let (train, test) = scaffold_split(&ds, fraction, seed)?;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.records[i].clone()).collect::<Vec<_>>();
    write_csv(&out.join("train.csv"), &pick(&train))?;
    write_csv(&out.join("test.csv"), &pick(&test))?;
    let keys = scaffold_keys(&ds.graphs);
    let groups = |idx: &[usize]| idx.iter().map(|&i| keys[i].as_str()).collect::<std::collections::BTreeSet<_>>().len();
    print_json(&json!({
        "train": train.len(),
        "test": test.len(),
        "duplicates_dropped": ds.duplicates,
        "train_scaffolds": groups(&train),
        "test_scaffolds": groups(&test),
    }))
}

fn parse_pairing(text: &str, names: &[String]) -> Result<Pairing, CliError> {
    match text.split_once(':') {
        None if text == "all_pairs" => Ok(Pairing::AllPairs),
        None if text == "star" => Ok(Pairing::Star(0)),
        Some(("star", task)) => names
            .iter()
            .position(|n| n == task)
            .map(Pairing::Star)
            .ok_or_else(|| CliError::Config(format!("--pairing: unknown task {task:?}"))),
        _ => Err(CliError::Config(format!("--pairing: expected all_pairs, star or star:<task>, found {text:?}"))),
    }
}

/// Loads the run file and applies command-line overrides.
fn load_run(
    config: &Path,
    seed: Option<u64>,
    mode: Option<String>,
    pairing: Option<String>,
    out: Option<PathBuf>,
) -> Result<(RunConfig, Vec<TaskDataset>), CliError> {
    let mut rc = RunConfig::load(config)?;
    let names: Vec<String> = rc.datasets.iter().map(|(n, _)| n.clone()).collect();
    if let Some(s) = seed {
        rc.train.seed = s;
    }
    if let Some(m) = mode {
        rc.train.mode = m.parse::<Mode>()?;
    }
    if let Some(p) = pairing {
        rc.train.pairing = parse_pairing(&p, &names)?;
    }
    if let Some(o) = out {
        rc.out_dir = o;
    }
    rc.train.validate(names.len())?;
    let datasets = rc
        .datasets
        .iter()
        .map(|(name, path)| TaskDataset::load_csv(path, name.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((rc, datasets))
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn train(
    config: &Path,
    seed: Option<u64>,
    mode: Option<String>,
    pairing: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (rc, datasets) = load_run(config, seed, mode, pairing, out)?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()))
    };
    fs::create_dir_all(&rc.out_dir).map_err(io(&rc.out_dir))?;
    let started = unix_seconds();
    let clock = Instant::now();

    const STEP_LOG: &str = "steps.jsonl";
    let log_path = rc.out_dir.join(STEP_LOG);
    let mut log = if rc.step_log {
        Some(BufWriter::new(File::create(&log_path).map_err(io(&log_path))?))
    } else {
        None
    };
    let mut log_error = None;
    let mut sink = |r: &gate_core::training::StepRecord| {
        if let (Some(w), None) = (log.as_mut(), log_error.as_ref()) {
            let line = serde_json::to_string(r).expect("step records serialize");
            if let Err(e) = writeln!(w, "{line}") {
                log_error = Some(e);
            }
        }
    };
    let outcome = train_with_log(&rc.train, &datasets, &mut sink)?;
    if let Some(e) = log_error {
        return Err(io(&log_path)(e));
    }
    if let Some(mut w) = log {
        w.flush().map_err(io(&log_path))?;
    }

    let mut report = outcome.report;
    report.loss_log = rc.step_log.then(|| STEP_LOG.to_string());
    let (json_path, csv_path) = emit_report(&report, &rc.out_dir, "report")?;
    let checkpoint = rc.checkpoint_path();
    if let Some(dir) = checkpoint.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    save_checkpoint(&outcome.model, &checkpoint)?;
    // Wall-clock facts live apart from the report so reports stay reproducible.
    write_json(
        &rc.out_dir.join("run_meta.json"),
        &json!({
            "started_unix": started,
            "elapsed_seconds": clock.elapsed().as_secs_f64(),
            "config": config.display().to_string(),
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    print_json(&json!({
        "report": json_path.display().to_string(),
        "table": csv_path.display().to_string(),
        "checkpoint": checkpoint.display().to_string(),
        "summary": report.summary,
    }))
}

fn eval(checkpoint: &Path, csv: &Path, task: Option<String>, out: Option<PathBuf>) -> Result<(), CliError> {
    let model = load_checkpoint(checkpoint)?;
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned());
    let names: Vec<&str> = model.tasks().iter().map(|t| t.name.as_str()).collect();
    let index = match (&task, names.len()) {
        (Some(t), _) => names.iter().position(|n| n == t),
        (None, 1) => Some(0),
        (None, _) => stem.as_deref().and_then(|s| names.iter().position(|n| *n == s)),
    }
    .ok_or_else(|| {
        CliError::Config(format!("choose a task with --task; the checkpoint has {}", names.join(", ")))
    })?;
    let ds = TaskDataset::load_csv(csv, names[index])?;
    let pred = predict_graphs(&model, index, ds.graphs.iter().collect())?;
    let y = ds.values(&(0..ds.len()).collect::<Vec<_>>());
    let r = rmse(&y, &pred).map_err(|e| CliError::Data(e.to_string()))?;
    if !r.is_finite() {
        return Err(CliError::Numerical("non-finite predictions".into()));
    }
    let v = json!({
        "task": names[index],
        "molecules": ds.len(),
        "duplicates_dropped": ds.duplicates,
        "rmse": r,
        "pearson": pearson(&y, &pred).ok(),
    });
    match out {
        Some(p) => write_json(&p, &v),
        None => print_json(&v),
    }
}

fn gradcheck(seed: u64, seeds: u64) -> Result<(), CliError> {
    if seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let setup = GradcheckSetup::default();
    let mut worst = [0.0f64; LOSS_TERMS.len()];
    let mut runs = Vec::new();
    for s in seed..seed + seeds {
        let checks = check_loss_gradients(&setup, s).map_err(|e| CliError::Numerical(e.to_string()))?;
        for (w, c) in worst.iter_mut().zip(&checks) {
            *w = w.max(c.max_rel_error);
        }
        runs.push(json!({ "seed": s, "terms": checks }));
    }
    let failed: Vec<&str> =
        LOSS_TERMS.iter().zip(&worst).filter(|(_, &w)| !(w < GRADCHECK_TOLERANCE)).map(|(t, _)| *t).collect();
    let worst: serde_json::Map<String, Value> = LOSS_TERMS.iter().zip(worst).map(|(t, w)| (t.to_string(), json!(w))).collect();
    print_json(&json!({ "eps": setup.eps, "tolerance": GRADCHECK_TOLERANCE, "worst": worst, "runs": runs }))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("relative error reached {GRADCHECK_TOLERANCE} for {}", failed.join(", "))))
    }
}

fn matrix(
    config: &Path,
    kind: MatrixKind,
    seed: Option<u64>,
    pairing: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (rc, datasets) = load_run(config, seed, None, pairing, out)?;
    let k = datasets.len();
    let spec = match kind {
        MatrixKind::Modes => MatrixSpec::modes(k),
        MatrixKind::Subsets => {
            let target = match rc.train.pairing {
                Pairing::Star(t) => t,
                Pairing::AllPairs => 0,
            };
            MatrixSpec::subsets(k, target)
        }
    };
    let runs = run_matrix(&rc.train, &datasets, &spec)?;
    for r in &runs {
        emit_report(&r.report, &rc.out_dir, &r.spec.label)?;
    }
    let summary = match kind {
        MatrixKind::Modes => {
            let by = |m: &str| runs.iter().find(|r| r.report.mode == m).map(|r| &r.report);
            let (stl, mtl, gate) = (by("stl"), by("mtl"), by("gate"));
            json!({
                "gate_vs_stl": stl.zip(gate).map(|(s, g)| improvement_table(g, s)),
                "mtl_vs_stl": stl.zip(mtl).map(|(s, m)| improvement_table(m, s)),
                "gate_vs_mtl": mtl.zip(gate).map(|(m, g)| improvement_table(g, m)),
            })
        }
        MatrixKind::Subsets => json!({ "subsets": subset_summary(&runs) }),
    };
    let runs_json: Vec<Value> = runs.iter().map(|r| json!({ "run": r.spec, "summary": r.report.summary })).collect();
    let v = json!({ "runs": runs_json, "comparison": summary });
    write_json(&rc.out_dir.join("matrix.json"), &v)?;
    print_json(&v)
}
