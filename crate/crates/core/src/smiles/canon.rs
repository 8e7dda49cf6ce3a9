use std::collections::HashSet;

use super::graph::MolGraph;
use crate::hash;

fn initial_label(g: &MolGraph, atom: usize) -> u64 {
    let a = &g.atoms()[atom];
    hash::key(&[
        a.element.index() as u64,
        i64::from(a.formal_charge) as u64,
        u64::from(a.aromatic),
        g.degree(atom) as u64,
    ])
}

fn class_count(labels: &[u64]) -> usize {
    labels.iter().collect::<HashSet<_>>().len()
}

/// Morgan-style refined atom labels; stable under atom reordering.
pub(crate) fn refined_labels(g: &MolGraph) -> Vec<u64> {
    let n = g.atom_count();
    let mut labels: Vec<u64> = (0..n).map(|i| initial_label(g, i)).collect();
    let mut classes = class_count(&labels);
    for _ in 0..n {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut around: Vec<u64> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(j, bi)| hash::combine(g.bonds()[bi].order.index() as u64, labels[j]))
                    .collect();
                around.sort_unstable();
                around.iter().fold(labels[i], |h, &x| hash::combine(h, x))
            })
            .collect();
        let next_classes = class_count(&next);
        labels = next;
        if next_classes == classes {
            break;
        }
        classes = next_classes;
    }
    labels
}

/// Deterministic key for grouping identical graphs.
///
/// Equal for any atom ordering of the same molecule; the empty graph maps to
/// the empty string.
pub fn canonical_key(g: &MolGraph) -> String {
    if g.is_empty() {
        return String::new();
    }
    let labels = refined_labels(g);
    let mut atoms = labels.clone();
    atoms.sort_unstable();
    let mut edges: Vec<(u64, u64, usize)> = g
        .bonds()
        .iter()
        .map(|b| {
            let (x, y) = (labels[b.begin], labels[b.end]);
            (x.min(y), x.max(y), b.order.index())
        })
        .collect();
    edges.sort_unstable();
    let atom_part: Vec<String> = atoms.iter().map(|l| format!("{l:016x}")).collect();
    let edge_part: Vec<String> = edges.iter().map(|(x, y, o)| format!("{x:016x}-{y:016x}-{o}")).collect();
    format!("{}:{}|{}", g.atom_count(), atom_part.join(","), edge_part.join(","))
}
