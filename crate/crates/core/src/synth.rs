//! Seeded synthetic multi-task regression data.
//!
//! Molecules are small random SMILES built from alkane, alcohol/amine and
//! ring templates. Each molecule gets a descriptor vector computed from its
//! parsed graph, and every task's target is a smooth function of three
//! latent factors of those descriptors. Two factors are shared by all tasks
//! and one is task-specific, so the tasks are related without being
//! identical. The designated target task (task 0) keeps only a fraction of
//! its labels.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash;
use crate::smiles::{parse_smiles, MolGraph};
use crate::training::{write_csv, Record, TrainError};

/// Number of graph statistics available as descriptors.
pub const MAX_DESCRIPTORS: usize = 6;
pub const MIN_HEAVY_ATOMS: usize = 3;
pub const MAX_HEAVY_ATOMS: usize = 12;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("generated SMILES {smiles:?} failed to parse: {detail}")]
    Generator { smiles: String, detail: String },
    #[error(transparent)]
    Write(#[from] TrainError),
    #[error("i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_tasks: usize,
    pub n_molecules: usize,
    /// How many of the graph descriptors feed the latent factors (3 to 6).
    pub descriptor_dim: usize,
    /// Share of molecules that keep a label for task 0.
    pub target_data_fraction: f64,
    /// Share of molecules each other task labels, drawn independently per task.
    #[serde(default = "full_coverage")]
    pub source_data_fraction: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_tasks: 3, n_molecules: 400, descriptor_dim: MAX_DESCRIPTORS, target_data_fraction: 0.2, source_data_fraction: 1.0, noise_std: 0.05, seed: 0 }
    }
}

fn full_coverage() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.n_tasks < 2 {
            return bad(format!("n_tasks must be at least 2, got {}", self.n_tasks));
        }
        if self.n_molecules < 10 {
            return bad(format!("n_molecules must be at least 10, got {}", self.n_molecules));
        }
        if !(3..=MAX_DESCRIPTORS).contains(&self.descriptor_dim) {
            return bad(format!("descriptor_dim must lie in 3..={MAX_DESCRIPTORS}, got {}", self.descriptor_dim));
        }
        if !(self.target_data_fraction > 0.0 && self.target_data_fraction <= 1.0) {
            return bad(format!("target_data_fraction must lie in (0, 1], got {}", self.target_data_fraction));
        }
        if !(self.source_data_fraction > 0.0 && self.source_data_fraction <= 1.0) {
            return bad(format!("source_data_fraction must lie in (0, 1], got {}", self.source_data_fraction));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be finite and non-negative, got {}", self.noise_std));
        }
        Ok(())
    }
}

/// Graph statistics, each scaled to roughly unit range and centred:
/// heavy-atom count, ring count, heteroatom fraction, branching index
/// (share of atoms with three or more heavy neighbours), aromatic fraction
/// and terminal-atom fraction.
pub fn descriptors(g: &MolGraph) -> [f64; MAX_DESCRIPTORS] {
    let n = g.atom_count().max(1) as f64;
    let frac = |pred: &dyn Fn(usize) -> bool| (0..g.atom_count()).filter(|&i| pred(i)).count() as f64 / n;
    [
        (g.atom_count() as f64 - 7.5) / 4.5,
        g.ring_count() as f64 - 0.8,
        2.0 * frac(&|i| g.atoms()[i].element.is_heteroatom()) - 0.3,
        3.0 * frac(&|i| g.degree(i) >= 3) - 0.3,
        frac(&|i| g.atoms()[i].aromatic) * 2.0 - 0.5,
        2.0 * frac(&|i| g.degree(i) == 1) - 0.5,
    ]
}

/// `f(d) = c0·tanh(w0·d) + c1·(w1·d) + c2·sin(w2·d)` over the first
/// `w*.len()` descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFunction {
    pub weights: [Vec<f64>; 3],
    pub coefficients: [f64; 3],
}

impl TaskFunction {
    pub fn eval(&self, d: &[f64]) -> f64 {
        let dot = |w: &[f64]| w.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
        let c = &self.coefficients;
        c[0] * dot(&self.weights[0]).tanh() + c[1] * dot(&self.weights[1]) + c[2] * dot(&self.weights[2]).sin()
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| 1.5 * x / norm).collect()
}

/// The task functions `generate` uses for `spec`: the first two factor
/// directions are common to all tasks, the third is drawn per task.
pub fn task_functions(spec: &SyntheticSpec) -> Vec<TaskFunction> {
    let mut shared = ChaCha8Rng::seed_from_u64(hash::key(&[spec.seed, 0xFAC7]));
    let w0 = unit_direction(&mut shared, spec.descriptor_dim);
    let w1 = unit_direction(&mut shared, spec.descriptor_dim);
    (0..spec.n_tasks)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(hash::key(&[spec.seed, 0x7A5C, t as u64]));
            let w2 = unit_direction(&mut rng, spec.descriptor_dim);
            let coefficients = [rng.random_range(0.8..1.2), rng.random_range(0.4..0.8), rng.random_range(0.2..0.4)];
            TaskFunction { weights: [w0.clone(), w1.clone(), w2], coefficients }
        })
        .collect()
}

/// A random tree of `n` atoms written as SMILES; `labels[i]` is atom `i`'s
/// symbol and atoms only attach to parents with spare valence.
fn tree_smiles(rng: &mut ChaCha8Rng, labels: &[&str]) -> String {
    let n = labels.len();
    let capacity = |s: &str| match s {
        "O" => 2,
        "N" => 3,
        _ => 4,
    };
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut degree = vec![0usize; n];
    for i in 1..n {
        let spare = |p: &usize| degree[*p] < capacity(labels[*p]);
        let near: Vec<usize> = (i.saturating_sub(3)..i).filter(spare).collect();
        let parent = match near.choose(rng) {
            Some(&p) => p,
            None => (0..i).find(spare).expect("carbon atoms leave spare valence"),
        };
        children[parent].push(i);
        degree[parent] += 1;
        degree[i] += 1;
    }
    fn write(atom: usize, labels: &[&str], children: &[Vec<usize>], out: &mut String) {
        out.push_str(labels[atom]);
        let kids = &children[atom];
        if let Some((last, rest)) = kids.split_last() {
            for &k in rest {
                out.push('(');
                write(k, labels, children, out);
                out.push(')');
            }
            write(*last, labels, children, out);
        }
    }
    let mut s = String::new();
    write(0, labels, &children, &mut s);
    s
}

fn acyclic(rng: &mut ChaCha8Rng, n: usize) -> String {
    if n == 1 {
        return ["C", "O", "N"].choose(rng).expect("symbols").to_string();
    }
    let mut labels = vec!["C"; n];
    match rng.random_range(0..3) {
        0 => {}
        1 => labels[n - 1] = "O",
        _ => {
            let i = rng.random_range(1..n);
            labels[i] = if rng.random_bool(0.5) { "N" } else { "O" };
        }
    }
    tree_smiles(rng, &labels)
}

const RINGS: [&[&str]; 7] = [
    &["c", "c", "c", "c", "c", "c"],
    &["c", "c", "n", "c", "c", "c"],
    &["c", "c", "o", "c", "c"],
    &["c", "c", "s", "c", "c"],
    &["C", "C", "C", "C", "C", "C"],
    &["C", "C", "C", "C", "C"],
    &["C", "C", "N", "C", "C", "C"],
];

/// A ring written with closure label `label`, with at most one substituent
/// branch per carbon position.
fn ring_smiles(rng: &mut ChaCha8Rng, ring: &[&str], label: u8, substituents: &[String]) -> String {
    let mut sites: Vec<usize> = (1..ring.len()).filter(|&i| ring[i].eq_ignore_ascii_case("c")).collect();
    sites.shuffle(rng);
    let mut at: Vec<Vec<&str>> = vec![Vec::new(); ring.len()];
    for (s, &i) in substituents.iter().zip(&sites) {
        at[i].push(s);
    }
    let mut out = String::new();
    for (i, a) in ring.iter().enumerate() {
        out.push_str(a);
        if i == 0 || i == ring.len() - 1 {
            out.push(char::from(b'0' + label));
        }
        for s in &at[i] {
            out.push('(');
            out.push_str(s);
            out.push(')');
        }
    }
    out
}

fn ringed(rng: &mut ChaCha8Rng, budget: usize) -> String {
    let ring = *RINGS.choose(rng).expect("rings");
    let mut left = budget.saturating_sub(ring.len());
    if left >= 6 && rng.random_bool(0.3) {
        // two rings joined by a short linker
        let second = *RINGS.iter().filter(|r| r.len() <= left - 1).collect::<Vec<_>>().choose(rng).expect("small ring");
        let linker = "C".repeat(rng.random_range(1..=(left - second.len()).min(2)));
        let a = ring_smiles(rng, ring, 1, &[]);
        let b = ring_smiles(rng, second, 2, &[]);
        return format!("{a}{linker}{b}");
    }
    let mut subs = Vec::new();
    while left > 0 && subs.len() < 3 && rng.random_bool(0.7) {
        let size = rng.random_range(1..=left.min(3));
        subs.push(acyclic(rng, size));
        left -= size;
    }
    ring_smiles(rng, ring, 1, &subs)
}

/// One random SMILES with `MIN_HEAVY_ATOMS..=MAX_HEAVY_ATOMS` heavy atoms.
pub fn random_smiles(rng: &mut ChaCha8Rng) -> String {
    let budget = rng.random_range(MIN_HEAVY_ATOMS..=MAX_HEAVY_ATOMS);
    if budget >= 5 && rng.random_bool(0.6) {
        ringed(rng, budget)
    } else {
        acyclic(rng, budget)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub name: String,
    pub records: Vec<Record>,
    /// Noise-free target of each record.
    pub clean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub tasks: Vec<SyntheticTask>,
    pub functions: Vec<TaskFunction>,
}

/// Generates the data for `spec` with its own task functions.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData, SynthError> {
    generate_with(spec, task_functions(spec))
}

/// Generates data labeling the molecule pool with the given functions, one per task.
pub fn generate_with(spec: &SyntheticSpec, functions: Vec<TaskFunction>) -> Result<SyntheticData, SynthError> {
    spec.validate()?;
    if functions.len() != spec.n_tasks {
        return Err(SynthError::Spec(format!("{} task functions for {} tasks", functions.len(), spec.n_tasks)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hash::key(&[spec.seed, 0x5111]));
    let mut seen = HashSet::new();
    let mut pool = Vec::with_capacity(spec.n_molecules);
    let mut attempts = 0;
    while pool.len() < spec.n_molecules {
        attempts += 1;
        if attempts > 200 * spec.n_molecules {
            return Err(SynthError::Spec(format!("could not draw {} distinct molecules", spec.n_molecules)));
        }
        let s = random_smiles(&mut rng);
        if !seen.insert(s.clone()) {
            continue;
        }
        let g = parse_smiles(&s).map_err(|e| SynthError::Generator { smiles: s.clone(), detail: e.to_string() })?;
        let d = descriptors(&g);
        pool.push((s, d));
    }

    let subset = |fraction: f64, stream: &[u64]| {
        let keep = ((fraction * spec.n_molecules as f64).round() as usize).clamp(1, spec.n_molecules);
        let mut rows: Vec<usize> = (0..spec.n_molecules).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(hash::key(stream)));
        rows.truncate(keep);
        rows.sort_unstable();
        rows
    };

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| SynthError::Spec(e.to_string()))?;
    let tasks = functions
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let rows = match t {
                0 => subset(spec.target_data_fraction, &[spec.seed, 0x7A6E]),
                _ if spec.source_data_fraction >= 1.0 => (0..spec.n_molecules).collect(),
                _ => subset(spec.source_data_fraction, &[spec.seed, 0x50C, t as u64]),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(hash::key(&[spec.seed, 0x4015E, t as u64]));
            let clean: Vec<f64> = rows.iter().map(|&i| f.eval(&pool[i].1[..spec.descriptor_dim])).collect();
            let records = rows
                .iter()
                .zip(&clean)
                .map(|(&i, &c)| Record { smiles: pool[i].0.clone(), value: c + noise.sample(&mut rng) })
                .collect();
            SyntheticTask { name: format!("task{t}"), records, clean }
        })
        .collect();
    Ok(SyntheticData { tasks, functions })
}

/// Writes `<dir>/<task>.csv` per task plus `spec.json`, returning the CSV paths.
pub fn write_synthetic(spec: &SyntheticSpec, data: &SyntheticData, dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut paths = Vec::new();
    for t in &data.tasks {
        let p = dir.join(format!("{}.csv", t.name));
        write_csv(&p, &t.records)?;
        paths.push(p);
    }
    let meta = serde_json::json!({ "spec": spec, "functions": data.functions });
    let p = dir.join("spec.json");
    let text = serde_json::to_string_pretty(&meta).expect("plain data serializes");
    fs::write(&p, text + "\n").map_err(io(&p))?;
    Ok(paths)
}
