use super::graph::{Bond, MolGraph};
use super::parser::implicit_hydrogens;

/// Bemis–Murcko scaffold: ring systems plus the linkers between them.
///
/// Non-ring atoms of degree ≤ 1 are removed until none remain. Exocyclic
/// double-bonded atoms go with the side chains. Acyclic input yields the
/// empty graph.
pub fn extract_scaffold(g: &MolGraph) -> MolGraph {
    let n = g.atom_count();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    loop {
        let doomed: Vec<usize> = (0..n)
            .filter(|&i| alive[i] && !g.atoms()[i].ring_member && degree[i] <= 1)
            .collect();
        if doomed.is_empty() {
            break;
        }
        for &i in &doomed {
            alive[i] = false;
        }
        for &i in &doomed {
            for &(j, _) in g.neighbors(i) {
                degree[j] = degree[j].saturating_sub(1);
            }
        }
    }

    let mut remap = vec![usize::MAX; n];
    let mut atoms = Vec::new();
    for i in (0..n).filter(|&i| alive[i]) {
        remap[i] = atoms.len();
        atoms.push(g.atoms()[i].clone());
    }
    if atoms.is_empty() {
        return MolGraph::empty(g.source_text());
    }
    let bonds: Vec<Bond> = g
        .bonds()
        .iter()
        .filter(|b| alive[b.begin] && alive[b.end])
        .map(|b| Bond { begin: remap[b.begin], end: remap[b.end], order: b.order })
        .collect();
    for (i, atom) in atoms.iter_mut().enumerate() {
        if atom.bracket {
            continue;
        }
        let orders = bonds.iter().filter(|b| b.begin == i || b.end == i).map(|b| b.order);
        // removing bonds only lowers the used valence, so this cannot fail
        atom.implicit_h = implicit_hydrogens(atom, orders).unwrap_or(0);
    }
    MolGraph::new(atoms, bonds, g.source_text()).expect("pruning leaves preserve connectivity")
}
