use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::TaskDataset;
use super::TrainError;
use crate::hash;
use crate::smiles::{canonical_key, extract_scaffold, MolGraph};

/// Scaffold key of every molecule; acyclic molecules share the empty key.
pub fn scaffold_keys(graphs: &[MolGraph]) -> Vec<String> {
    graphs.iter().map(|g| canonical_key(&extract_scaffold(g))).collect()
}

fn key_hash(seed: u64, key: &str) -> u64 {
    let words: Vec<u64> = std::iter::once(seed).chain(key.bytes().map(u64::from)).collect();
    hash::key(&words)
}

/// Whole scaffold groups go to test, smallest first, until `test_fraction`
/// of the molecules is reached or first exceeded.
///
/// Groups are ordered by descending size; equal sizes are ordered by a
/// seeded hash of the scaffold key, so the seed picks among equally sized
/// groups. Both returned index lists are ascending.
pub fn scaffold_split(ds: &TaskDataset, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    split_by_keys(&scaffold_keys(&ds.graphs), test_fraction, seed)
}

pub fn split_by_keys(keys: &[String], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if !(test_fraction > 0.0 && test_fraction < 0.5) {
        return Err(TrainError::Config(format!("test fraction must lie in (0, 0.5), got {test_fraction}")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(k.as_str()).or_default().push(i);
    }
    let mut ordered: Vec<(&str, Vec<usize>)> = groups.into_iter().collect();
    ordered.sort_by(|a, b| {
        b.1.len().cmp(&a.1.len()).then_with(|| key_hash(seed, a.0).cmp(&key_hash(seed, b.0))).then_with(|| a.0.cmp(b.0))
    });
    let wanted = test_fraction * keys.len() as f64;
    let mut test = Vec::new();
    let mut cut = ordered.len();
    while (test.len() as f64) < wanted && cut > 0 {
        cut -= 1;
        test.extend_from_slice(&ordered[cut].1);
    }
    let mut train: Vec<usize> = ordered[..cut].iter().flat_map(|(_, g)| g.iter().copied()).collect();
    if test.is_empty() || train.is_empty() {
        return Err(TrainError::Data(format!(
            "cannot split {} molecules in {} scaffold groups at test fraction {test_fraction} with whole groups",
            keys.len(),
            ordered.len()
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Seeded shuffle, then `k` contiguous chunks whose sizes differ by at most one.
pub fn kfold_uniform(indices: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if k < 2 {
        return Err(TrainError::Config(format!("need at least 2 folds, got {k}")));
    }
    if indices.len() < k {
        return Err(TrainError::Data(format!("cannot make {k} folds from {} molecules", indices.len())));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(hash::key(&[seed, 0xF01D])));
    let (base, extra) = (indices.len() / k, indices.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(shuffled[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// Train/test split of one task plus cross-validation folds over its training part.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl SplitPlan {
    pub fn new(ds: &TaskDataset, test_fraction: f64, k: usize, seed: u64) -> Result<Self, TrainError> {
        let (train, test) = scaffold_split(ds, test_fraction, seed)?;
        let folds = kfold_uniform(&train, k, seed)?;
        Ok(Self { train, test, folds })
    }

    /// `(training, validation)` indices for fold `f`.
    pub fn fold(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let train = self.folds.iter().enumerate().filter(|&(i, _)| i != f).flat_map(|(_, v)| v.iter().copied()).collect();
        (train, self.folds[f].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn single_scaffold_cannot_split() {
        let keys = vec!["x".to_string(); 10];
        assert!(split_by_keys(&keys, 0.2, 1).is_err());
    }

    #[test]
    fn singletons_split_exactly() {
        let keys: Vec<String> = (0..10).map(|i| format!("k{i}")).collect();
        let (train, test) = split_by_keys(&keys, 0.2, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let other = split_by_keys(&keys, 0.2, 2).unwrap();
        assert_eq!(other.1.len(), 2);
    }

    #[test]
    fn groups_stay_whole() {
        let keys: Vec<String> = ["a", "a", "a", "b", "b", "c", "d", "d", "a", "e"].iter().map(|s| s.to_string()).collect();
        let (train, test) = split_by_keys(&keys, 0.3, 5).unwrap();
        let tr: HashSet<&str> = train.iter().map(|&i| keys[i].as_str()).collect();
        let te: HashSet<&str> = test.iter().map(|&i| keys[i].as_str()).collect();
        assert!(tr.is_disjoint(&te));
        assert!(test.len() >= 3);
        assert!(!te.contains("a"), "the largest group stays in train");
    }

    #[test]
    fn bad_fraction() {
        let keys: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        assert!(split_by_keys(&keys, 0.0, 1).is_err());
        assert!(split_by_keys(&keys, 0.5, 1).is_err());
    }

    #[test]
    fn fold_sizes() {
        let idx: Vec<usize> = (0..8).collect();
        let f = kfold_uniform(&idx, 4, 3).unwrap();
        assert!(f.iter().all(|x| x.len() == 2));
        let idx: Vec<usize> = (0..9).collect();
        let f = kfold_uniform(&idx, 4, 3).unwrap();
        assert_eq!(f.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 2, 2]);
        assert_eq!(f, kfold_uniform(&idx, 4, 3).unwrap());
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, idx);
        assert!(kfold_uniform(&idx, 1, 3).is_err());
        assert!(kfold_uniform(&idx[..3], 4, 3).is_err());
    }
}
