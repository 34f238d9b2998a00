//! SMILES parsing, canonicalization, tokenization, and sequence framing.

mod canonical;
mod parser;
mod vocab;

pub use canonical::{canonical_order, canonical_string, write_with_order};
pub use parser::parse_smiles;
pub use vocab::{
    build_vocabulary, detokenize, frame, segment, tokenize, FramedSequence, VocabError,
    Vocabulary, END_TOKEN, PAD_TOKEN, START_TOKEN,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("ring closure {0} is never matched")]
    UnbalancedRing(String),
    #[error("unbalanced parenthesis at position {0}")]
    UnbalancedParen(usize),
    #[error("no atom where one was expected at position {1} (found {0:?})")]
    UnknownAtom(String, usize),
    #[error("explicit bonds exceed the allowed valence of atom {0}")]
    ValenceError(usize),
    #[error("multi-component SMILES are not supported")]
    MultiComponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution of one bond of this order to an endpoint's valence sum.
    /// Aromatic bonds count as one; the delocalized extra is handled by the
    /// hydrogen assignment rule for aromatic atoms.
    pub fn valence_units(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

/// Tetrahedral parity marker from a bracket atom. Parsed so the annotation
/// survives, but nothing downstream interprets it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chirality {
    Counterclockwise,
    Clockwise,
}

/// Direction flag on a single bond ("/" or "\\"). Preserved, not interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BondDir {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: String,
    pub aromatic: bool,
    pub charge: i8,
    /// Hydrogen count, either fixed by a bracket or assigned by valence rules.
    pub h_count: u8,
    pub isotope: Option<u16>,
    pub chirality: Option<Chirality>,
    /// True when the atom was written in brackets, which pins its hydrogen
    /// count instead of leaving it to valence rules.
    pub bracket: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub dir: Option<BondDir>,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// A parsed molecular graph. Always a single connected component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Per-atom flag: the atom lies on some cycle.
    pub atom_in_ring: Vec<bool>,
    /// Per-bond flag: the bond lies on some cycle.
    pub bond_in_ring: Vec<bool>,
}

impl Molecule {
    /// Adjacency list as (neighbor atom index, bond index) pairs.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (bi, bond) in self.bonds.iter().enumerate() {
            adj[bond.a].push((bond.b, bi));
            adj[bond.b].push((bond.a, bi));
        }
        adj
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .count()
    }

    /// Sum of valence units over the bonds incident to an atom.
    pub fn bond_units(&self, atom: usize) -> u8 {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .map(|b| b.order.valence_units())
            .sum()
    }
}
