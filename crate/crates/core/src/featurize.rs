//! Fixed-width atom/bond features and directed-edge batches.
//!
//! Atom layout (24 values):
//!
//! | slots  | feature                                        |
//! |--------|------------------------------------------------|
//! | 0..11  | element one-hot, in [`Element::PALETTE`] order |
//! | 11..16 | heavy-atom degree one-hot 0..=4 (≥4 clamps)    |
//! | 16     | formal charge / 4                              |
//! | 17     | aromatic flag                                  |
//! | 18..23 | total hydrogen one-hot 0..=4 (≥4 clamps)       |
//! | 23     | ring-member flag                               |
//!
//! Bond layout (4 values): one-hot single, double, triple, aromatic.

use thiserror::Error;

use crate::diff::Tensor;
use crate::smiles::{Bond, Element, MolGraph};

pub const ATOM_FEATURES: usize = 24;
pub const BOND_FEATURES: usize = 4;

const DEGREE_OFFSET: usize = Element::PALETTE.len();
const DEGREE_SLOTS: usize = 5;
const CHARGE_SLOT: usize = DEGREE_OFFSET + DEGREE_SLOTS;
const AROMATIC_SLOT: usize = CHARGE_SLOT + 1;
const H_OFFSET: usize = AROMATIC_SLOT + 1;
const H_SLOTS: usize = 5;
const RING_SLOT: usize = H_OFFSET + H_SLOTS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeaturizeError {
    #[error("cannot batch an empty list of graphs")]
    EmptyBatch,
    #[error("graph {0} has no atoms")]
    EmptyGraph(usize),
}

pub fn atom_features(g: &MolGraph, atom: usize) -> [f64; ATOM_FEATURES] {
    let a = &g.atoms()[atom];
    let mut f = [0.0; ATOM_FEATURES];
    f[a.element.index()] = 1.0;
    f[DEGREE_OFFSET + g.degree(atom).min(DEGREE_SLOTS - 1)] = 1.0;
    f[CHARGE_SLOT] = f64::from(a.formal_charge) / 4.0;
    f[AROMATIC_SLOT] = f64::from(u8::from(a.aromatic));
    f[H_OFFSET + usize::from(a.total_h()).min(H_SLOTS - 1)] = 1.0;
    f[RING_SLOT] = f64::from(u8::from(a.ring_member));
    f
}

pub fn bond_features(b: &Bond) -> [f64; BOND_FEATURES] {
    let mut f = [0.0; BOND_FEATURES];
    f[b.order.index()] = 1.0;
    f
}

/// Several graphs flattened into one directed-edge structure.
///
/// Bond `b` of a graph becomes directed edges `2b` (begin→end) and `2b+1`
/// (end→begin), offset by the edges of the graphs before it.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub atom_features: Tensor,
    pub edge_features: Tensor,
    pub edge_source: Vec<usize>,
    pub edge_target: Vec<usize>,
    pub reverse_edge: Vec<usize>,
    pub graph_id: Vec<usize>,
    pub graph_count: usize,
}

impl GraphBatch {
    pub fn atom_count(&self) -> usize {
        self.graph_id.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_source.len()
    }
}

pub fn batch_graphs<'a>(graphs: impl IntoIterator<Item = &'a MolGraph>) -> Result<GraphBatch, FeaturizeError> {
    let mut atom_data = Vec::new();
    let mut edge_data = Vec::new();
    let (mut edge_source, mut edge_target, mut reverse_edge, mut graph_id) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut graph_count = 0;
    for (gi, g) in graphs.into_iter().enumerate() {
        if g.is_empty() {
            return Err(FeaturizeError::EmptyGraph(gi));
        }
        let atom_offset = graph_id.len();
        for atom in 0..g.atom_count() {
            atom_data.extend_from_slice(&atom_features(g, atom));
            graph_id.push(gi);
        }
        for b in g.bonds() {
            let e = edge_source.len();
            let features = bond_features(b);
            edge_source.extend([atom_offset + b.begin, atom_offset + b.end]);
            edge_target.extend([atom_offset + b.end, atom_offset + b.begin]);
            reverse_edge.extend([e + 1, e]);
            edge_data.extend_from_slice(&features);
            edge_data.extend_from_slice(&features);
        }
        graph_count += 1;
    }
    if graph_count == 0 {
        return Err(FeaturizeError::EmptyBatch);
    }
    Ok(GraphBatch {
        atom_features: Tensor::matrix(graph_id.len(), ATOM_FEATURES, atom_data),
        edge_features: Tensor::matrix(edge_source.len(), BOND_FEATURES, edge_data),
        edge_source,
        edge_target,
        reverse_edge,
        graph_id,
        graph_count,
    })
}
