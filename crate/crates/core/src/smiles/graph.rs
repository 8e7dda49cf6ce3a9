use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Elements the parser accepts. The declaration order is the one-hot slot
/// order used by the featurizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
    H,
}

impl Element {
    pub const PALETTE: [Element; 11] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
        Element::H,
    ];

    pub fn from_symbol(symbol: &str) -> Option<Self> {
        Self::PALETTE.iter().copied().find(|e| e.symbol() == symbol)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::H => "H",
        }
    }

    /// Position in [`Element::PALETTE`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Standard valences in increasing order, used for implicit hydrogens.
    pub fn default_valences(self) -> &'static [u8] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3, 5],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I | Element::H => &[1],
        }
    }

    pub fn is_heteroatom(self) -> bool {
        !matches!(self, Element::C | Element::H)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    pub aromatic: bool,
    /// Hydrogens written inside a bracket atom.
    pub explicit_h: u8,
    /// Hydrogens implied by standard valences (organic-subset atoms only).
    pub implicit_h: u8,
    /// Whether the atom was written in brackets.
    pub bracket: bool,
    /// Derived from the bond graph; set by [`MolGraph::new`].
    pub ring_member: bool,
}

impl Atom {
    pub fn total_h(&self) -> u8 {
        self.explicit_h + self.implicit_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's valence; aromatic bonds count as one and the
    /// extra half is handled per atom.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.begin == atom {
            self.end
        } else {
            self.begin
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("bond {bond} references atom {atom}, but the graph has {atoms} atoms")]
    InvalidEndpoint { bond: usize, atom: usize, atoms: usize },
    #[error("bond {bond} is a self-loop on atom {atom}")]
    SelfLoop { bond: usize, atom: usize },
    #[error("atoms {0} and {1} are joined by more than one bond")]
    DuplicateBond(usize, usize),
    #[error("graph is disconnected")]
    Disconnected,
}

/// A validated, connected molecular graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    source_text: String,
    #[serde(skip)]
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolGraph {
    /// Validates the bond list and recomputes `ring_member` flags.
    pub fn new(mut atoms: Vec<Atom>, bonds: Vec<Bond>, source_text: impl Into<String>) -> Result<Self, GraphError> {
        let n = atoms.len();
        let mut seen = HashSet::with_capacity(bonds.len());
        let mut adjacency = vec![Vec::new(); n];
        for (bi, b) in bonds.iter().enumerate() {
            for atom in [b.begin, b.end] {
                if atom >= n {
                    return Err(GraphError::InvalidEndpoint { bond: bi, atom, atoms: n });
                }
            }
            if b.begin == b.end {
                return Err(GraphError::SelfLoop { bond: bi, atom: b.begin });
            }
            let pair = (b.begin.min(b.end), b.begin.max(b.end));
            if !seen.insert(pair) {
                return Err(GraphError::DuplicateBond(pair.0, pair.1));
            }
            adjacency[b.begin].push((b.end, bi));
            adjacency[b.end].push((b.begin, bi));
        }
        if n > 0 && reachable(&adjacency, 0, None).len() != n {
            return Err(GraphError::Disconnected);
        }
        let ring_bonds = ring_bond_flags(&adjacency, &bonds);
        for (i, atom) in atoms.iter_mut().enumerate() {
            atom.ring_member = adjacency[i].iter().any(|&(_, bi)| ring_bonds[bi]);
        }
        Ok(Self { atoms, bonds, source_text: source_text.into(), adjacency })
    }

    pub fn empty(source_text: impl Into<String>) -> Self {
        Self { atoms: Vec::new(), bonds: Vec::new(), source_text: source_text.into(), adjacency: Vec::new() }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `(neighbor, bond index)` pairs for `atom`.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    /// Number of independent cycles (bonds − atoms + 1 for a connected graph).
    pub fn ring_count(&self) -> usize {
        if self.atoms.is_empty() {
            0
        } else {
            self.bonds.len() + 1 - self.atoms.len()
        }
    }

    pub fn ring_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.ring_member).count()
    }
}

fn reachable(adjacency: &[Vec<(usize, usize)>], start: usize, skip_bond: Option<usize>) -> HashSet<usize> {
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &(v, bi) in &adjacency[u] {
            if Some(bi) != skip_bond && seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    seen
}

/// A bond lies on a cycle iff its endpoints stay connected without it.
fn ring_bond_flags(adjacency: &[Vec<(usize, usize)>], bonds: &[Bond]) -> Vec<bool> {
    bonds
        .iter()
        .enumerate()
        .map(|(bi, b)| reachable(adjacency, b.begin, Some(bi)).contains(&b.end))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn carbon() -> Atom {
        Atom {
            element: Element::C,
            formal_charge: 0,
            aromatic: false,
            explicit_h: 0,
            implicit_h: 0,
            bracket: false,
            ring_member: false,
        }
    }

    fn single(begin: usize, end: usize) -> Bond {
        Bond { begin, end, order: BondOrder::Single }
    }

    #[test]
    fn rejects_duplicate_and_self_bonds() {
        let atoms = vec![carbon(), carbon()];
        assert_eq!(
            MolGraph::new(atoms.clone(), vec![single(0, 1), single(1, 0)], "").unwrap_err(),
            GraphError::DuplicateBond(0, 1)
        );
        assert!(matches!(MolGraph::new(atoms, vec![single(1, 1)], ""), Err(GraphError::SelfLoop { .. })));
    }

    #[test]
    fn rejects_disconnected() {
        let atoms = vec![carbon(), carbon(), carbon()];
        assert_eq!(MolGraph::new(atoms, vec![single(0, 1)], "").unwrap_err(), GraphError::Disconnected);
    }

    #[test]
    fn ring_flags_follow_cycles() {
        // triangle with a pendant atom
        let atoms = vec![carbon(); 4];
        let g = MolGraph::new(atoms, vec![single(0, 1), single(1, 2), single(2, 0), single(2, 3)], "").unwrap();
        let flags: Vec<bool> = g.atoms().iter().map(|a| a.ring_member).collect();
        assert_eq!(flags, vec![true, true, true, false]);
        assert_eq!(g.ring_count(), 1);
    }

    #[test]
    fn palette_round_trips_symbols() {
        for (i, e) in Element::PALETTE.iter().enumerate() {
            assert_eq!(Element::from_symbol(e.symbol()), Some(*e));
            assert_eq!(e.index(), i);
        }
        assert_eq!(Element::from_symbol("Na"), None);
    }
}
