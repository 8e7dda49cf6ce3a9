use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::graph::{Atom, Bond, BondOrder, Element, GraphError, MolGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmilesErrorKind {
    Empty,
    UnbalancedParentheses,
    UnmatchedRingClosure,
    UnknownElement,
    MultiFragment,
    ValenceOverflow,
    UnexpectedCharacter,
    /// A bond symbol with no atom after it.
    DanglingBond,
    /// Two bonds between the same pair of atoms, e.g. `C12CC12`.
    DuplicateBond,
    UnclosedBracket,
    InvalidBracketAtom,
    EmptyBranch,
}

impl fmt::Display for SmilesErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SmilesErrorKind::Empty => "empty input",
            SmilesErrorKind::UnbalancedParentheses => "unbalanced parentheses",
            SmilesErrorKind::UnmatchedRingClosure => "unmatched ring closure",
            SmilesErrorKind::UnknownElement => "unknown element",
            SmilesErrorKind::MultiFragment => "multi-fragment input is not supported",
            SmilesErrorKind::ValenceOverflow => "valence overflow",
            SmilesErrorKind::UnexpectedCharacter => "unexpected character",
            SmilesErrorKind::DanglingBond => "bond symbol without a following atom",
            SmilesErrorKind::DuplicateBond => "duplicate bond between the same atoms",
            SmilesErrorKind::UnclosedBracket => "unclosed bracket atom",
            SmilesErrorKind::InvalidBracketAtom => "invalid bracket atom",
            SmilesErrorKind::EmptyBranch => "empty branch",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at offset {offset}")]
pub struct SmilesError {
    pub kind: SmilesErrorKind,
    /// Byte offset into the input.
    pub offset: usize,
}

impl SmilesError {
    fn new(kind: SmilesErrorKind, offset: usize) -> Self {
        Self { kind, offset }
    }
}

/// Parses a single-fragment SMILES string.
pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    Parser::new(text).run()
}

struct RingOpen {
    atom: usize,
    order: Option<BondOrder>,
    offset: usize,
}

struct Parser<'a> {
    text: &'a str,
    input: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    atom_offsets: Vec<usize>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    pending: Option<(BondOrder, usize)>,
    // (atom before the branch, offset of '(', atoms count when opened)
    branches: Vec<(usize, usize, usize)>,
    rings: BTreeMap<u32, RingOpen>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text,
            input: text.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            atom_offsets: Vec::new(),
            bonds: Vec::new(),
            prev: None,
            pending: None,
            branches: Vec::new(),
            rings: BTreeMap::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn err(&self, kind: SmilesErrorKind) -> SmilesError {
        SmilesError::new(kind, self.pos)
    }

    fn run(mut self) -> Result<MolGraph, SmilesError> {
        if self.input.is_empty() {
            return Err(self.err(SmilesErrorKind::Empty));
        }
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    let Some(prev) = self.prev else {
                        return Err(self.err(SmilesErrorKind::UnexpectedCharacter));
                    };
                    if self.pending.is_some() {
                        return Err(self.err(SmilesErrorKind::DanglingBond));
                    }
                    self.branches.push((prev, self.pos, self.atoms.len()));
                    self.pos += 1;
                }
                b')' => {
                    let Some((prev, _, atoms_at_open)) = self.branches.pop() else {
                        return Err(self.err(SmilesErrorKind::UnbalancedParentheses));
                    };
                    if let Some((_, at)) = self.pending {
                        return Err(SmilesError::new(SmilesErrorKind::DanglingBond, at));
                    }
                    if self.atoms.len() == atoms_at_open {
                        return Err(self.err(SmilesErrorKind::EmptyBranch));
                    }
                    self.prev = Some(prev);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() || self.prev.is_none() {
                        return Err(self.err(SmilesErrorKind::UnexpectedCharacter));
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        // '/' and '\' carry direction only
                        _ => BondOrder::Single,
                    };
                    self.pending = Some((order, self.pos));
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_bond()?,
                b'.' => return Err(self.err(SmilesErrorKind::MultiFragment)),
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.push_atom(atom)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.push_atom(atom)?;
                }
            }
        }
        if let Some(&(_, offset, _)) = self.branches.last() {
            return Err(SmilesError::new(SmilesErrorKind::UnbalancedParentheses, offset));
        }
        if let Some(open) = self.rings.values().min_by_key(|r| r.offset) {
            return Err(SmilesError::new(SmilesErrorKind::UnmatchedRingClosure, open.offset));
        }
        if let Some((_, at)) = self.pending {
            return Err(SmilesError::new(SmilesErrorKind::DanglingBond, at));
        }
        self.assign_implicit_h()?;
        MolGraph::new(self.atoms, self.bonds, self.text).map_err(|e| match e {
            GraphError::DuplicateBond(..) => SmilesError::new(SmilesErrorKind::DuplicateBond, 0),
            _ => SmilesError::new(SmilesErrorKind::MultiFragment, 0),
        })
    }

    fn push_atom(&mut self, (atom, offset): (Atom, usize)) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        self.atom_offsets.push(offset);
        if let Some(prev) = self.prev {
            let order = self.pending.take().map(|(o, _)| o);
            self.add_bond(prev, idx, order, offset)?;
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn add_bond(&mut self, a: usize, b: usize, order: Option<BondOrder>, offset: usize) -> Result<(), SmilesError> {
        if a == b || self.bonds.iter().any(|x| (x.begin == a && x.end == b) || (x.begin == b && x.end == a)) {
            return Err(SmilesError::new(SmilesErrorKind::DuplicateBond, offset));
        }
        let order = order.unwrap_or(if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        });
        self.bonds.push(Bond { begin: a, end: b, order });
        Ok(())
    }

    fn ring_bond(&mut self) -> Result<(), SmilesError> {
        let start = self.pos;
        let Some(atom) = self.prev else {
            return Err(self.err(SmilesErrorKind::UnexpectedCharacter));
        };
        let label = if self.peek() == Some(b'%') {
            let digits = self.input.get(start + 1..start + 3).filter(|d| d.iter().all(u8::is_ascii_digit));
            let Some(d) = digits else {
                return Err(self.err(SmilesErrorKind::UnexpectedCharacter));
            };
            self.pos += 3;
            u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0')
        } else {
            self.pos += 1;
            u32::from(self.input[start] - b'0')
        };
        let pending = self.pending.take().map(|(o, _)| o);
        match self.rings.remove(&label) {
            Some(open) => {
                let order = pending.or(open.order);
                self.add_bond(open.atom, atom, order, start)
            }
            None => {
                self.rings.insert(label, RingOpen { atom, order: pending, offset: start });
                Ok(())
            }
        }
    }

    fn organic_atom(&mut self) -> Result<(Atom, usize), SmilesError> {
        let start = self.pos;
        let c = self.input[start];
        let next = self.input.get(start + 1).copied();
        let (element, aromatic, width) = match (c, next) {
            (b'C', Some(b'l')) => (Element::Cl, false, 2),
            (b'B', Some(b'r')) => (Element::Br, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            (c, _) if c.is_ascii_alphabetic() || c == b'*' => return Err(self.err(SmilesErrorKind::UnknownElement)),
            _ => return Err(self.err(SmilesErrorKind::UnexpectedCharacter)),
        };
        self.pos += width;
        let atom = Atom {
            element,
            formal_charge: 0,
            aromatic,
            explicit_h: 0,
            implicit_h: 0,
            bracket: false,
            ring_member: false,
        };
        Ok((atom, start))
    }

    fn bracket_atom(&mut self) -> Result<(Atom, usize), SmilesError> {
        let start = self.pos;
        let Some(len) = self.input[start..].iter().position(|&c| c == b']') else {
            return Err(self.err(SmilesErrorKind::UnclosedBracket));
        };
        let body = &self.input[start + 1..start + len];
        let body_offset = start + 1;
        let mut i = 0;
        let invalid = |at: usize| SmilesError::new(SmilesErrorKind::InvalidBracketAtom, body_offset + at);

        // isotope
        while i < body.len() && body[i].is_ascii_digit() {
            i += 1;
        }
        let sym_start = i;
        let (element, aromatic) = match body.get(i) {
            Some(c) if c.is_ascii_uppercase() => {
                let two = body.get(i + 1).filter(|c| c.is_ascii_lowercase()).is_some();
                let width = if two { 2 } else { 1 };
                let symbol = std::str::from_utf8(&body[i..i + width]).expect("ascii");
                i += width;
                match Element::from_symbol(symbol) {
                    Some(e) => (e, false),
                    None => return Err(SmilesError::new(SmilesErrorKind::UnknownElement, body_offset + sym_start)),
                }
            }
            Some(c) if c.is_ascii_lowercase() => {
                let element = match c {
                    b'b' => Element::B,
                    b'c' => Element::C,
                    b'n' => Element::N,
                    b'o' => Element::O,
                    b'p' => Element::P,
                    b's' => Element::S,
                    _ => return Err(SmilesError::new(SmilesErrorKind::UnknownElement, body_offset + i)),
                };
                i += 1;
                // two-letter aromatic symbols such as "se" are outside the palette
                if body.get(i).is_some_and(|c| c.is_ascii_lowercase()) {
                    return Err(SmilesError::new(SmilesErrorKind::UnknownElement, body_offset + sym_start));
                }
                (element, true)
            }
            Some(b'*') => return Err(SmilesError::new(SmilesErrorKind::UnknownElement, body_offset + i)),
            _ => return Err(invalid(i)),
        };

        // chirality, ignored
        while body.get(i) == Some(&b'@') {
            i += 1;
        }
        if i > sym_start && body.get(i).is_some_and(|c| c.is_ascii_uppercase() && *c != b'H') {
            // @TH1, @SP2, ...
            while body.get(i).is_some_and(u8::is_ascii_alphanumeric) {
                i += 1;
            }
        }

        let mut explicit_h = 0u8;
        if body.get(i) == Some(&b'H') {
            i += 1;
            explicit_h = 1;
            if let Some(d) = body.get(i).filter(|c| c.is_ascii_digit()) {
                explicit_h = d - b'0';
                i += 1;
            }
        }

        let mut charge: i32 = 0;
        if let Some(&sign @ (b'+' | b'-')) = body.get(i) {
            let unit = if sign == b'+' { 1 } else { -1 };
            i += 1;
            if let Some(d) = body.get(i).filter(|c| c.is_ascii_digit()) {
                charge = unit * i32::from(d - b'0');
                i += 1;
            } else {
                charge = unit;
                while body.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
            if !(-4..=4).contains(&charge) {
                return Err(invalid(i - 1));
            }
        }

        // atom class
        if body.get(i) == Some(&b':') {
            i += 1;
            let digits = body[i..].iter().take_while(|c| c.is_ascii_digit()).count();
            if digits == 0 {
                return Err(invalid(i));
            }
            i += digits;
        }
        if i != body.len() {
            return Err(invalid(i));
        }
        self.pos = start + len + 1;
        let atom = Atom {
            element,
            formal_charge: charge as i8,
            aromatic,
            explicit_h,
            implicit_h: 0,
            bracket: true,
            ring_member: false,
        };
        Ok((atom, start))
    }

    fn assign_implicit_h(&mut self) -> Result<(), SmilesError> {
        for idx in 0..self.atoms.len() {
            if self.atoms[idx].bracket {
                continue;
            }
            let bonds = self.bonds.iter().filter(|b| b.begin == idx || b.end == idx);
            let h = implicit_hydrogens(&self.atoms[idx], bonds.map(|b| b.order))
                .ok_or_else(|| SmilesError::new(SmilesErrorKind::ValenceOverflow, self.atom_offsets[idx]))?;
            self.atoms[idx].implicit_h = h;
        }
        Ok(())
    }
}

/// Implicit hydrogen count of an organic-subset atom, or `None` when the bonds
/// exceed every standard valence.
///
/// Aromatic atoms use their lowest valence and give one unit to the pi system;
/// a deficit clamps to zero (pyrrole-type `o`/`s`).
pub(crate) fn implicit_hydrogens(atom: &Atom, orders: impl Iterator<Item = BondOrder>) -> Option<u8> {
    let used: u8 = orders.map(BondOrder::valence).sum();
    let valences = atom.element.default_valences();
    if atom.aromatic {
        return Some(valences[0].saturating_sub(used + 1));
    }
    valences.iter().find(|&&v| v >= used).map(|v| v - used)
}
