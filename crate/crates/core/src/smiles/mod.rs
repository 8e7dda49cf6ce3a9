//! SMILES parsing, graph canonicalization, and Bemis–Murcko scaffolds.
//!
//! Covers the organic subset, bracket atoms (isotopes are read and dropped),
//! explicit bonds, ring closures including `%nn`, and branches. Stereo
//! markers are accepted and ignored. Multi-fragment input is rejected.

mod canon;
mod graph;
mod parser;
mod scaffold;

pub use canon::canonical_key;
pub use graph::{Atom, Bond, BondOrder, Element, GraphError, MolGraph};
pub use parser::{parse_smiles, SmilesError, SmilesErrorKind};
pub use scaffold::extract_scaffold;
