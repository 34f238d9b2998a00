//! SMILES text to molecular graph.

use std::collections::HashMap;

use super::{Atom, Bond, BondDir, BondOrder, Chirality, Molecule, SmilesError};

const ELEMENTS: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",
];

fn is_element(symbol: &str) -> bool {
    ELEMENTS.contains(&symbol)
}

/// Allowed valences for atoms written without brackets, smallest first.
fn default_valences(element: &str) -> &'static [u8] {
    match element {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => &[],
    }
}

/// Hydrogen count for a non-bracket atom given its bond unit sum.
/// Aromatic atoms reserve one extra unit for the delocalized system, and
/// never fail outright as long as the explicit bonds alone fit.
fn implicit_h(element: &str, aromatic: bool, units: u8) -> Option<u8> {
    let valences = default_valences(element);
    let max = *valences.last()?;
    if aromatic {
        if units > max {
            return None;
        }
        return Some(valences[0].saturating_sub(units + 1));
    }
    let v = valences.iter().copied().find(|&v| v >= units)?;
    Some(v - units)
}

pub(super) fn implicit_h_for_emission(element: &str, aromatic: bool, units: u8) -> Option<u8> {
    implicit_h(element, aromatic, units)
}

struct PendingBond {
    order: BondOrder,
    dir: Option<BondDir>,
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    stack: Vec<usize>,
    pending: Option<PendingBond>,
    open_rings: HashMap<u16, (usize, Option<PendingBond>, String)>,
}

pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    let text = text.trim();
    let mut parser = Parser {
        text,
        bytes: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        stack: Vec::new(),
        pending: None,
        open_rings: HashMap::new(),
    };
    parser.run()?;
    parser.finish()
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        if self.bytes.is_empty() {
            return Err(SmilesError::UnknownAtom(String::new(), 0));
        }
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    let at = match self.prev {
                        Some(at) => at,
                        None => return Err(SmilesError::UnbalancedParen(self.pos)),
                    };
                    self.stack.push(at);
                    self.pos += 1;
                }
                b')' => {
                    let at = match self.stack.pop() {
                        Some(at) => at,
                        None => return Err(SmilesError::UnbalancedParen(self.pos)),
                    };
                    self.prev = Some(at);
                    self.pos += 1;
                }
                b'-' => self.push_bond(BondOrder::Single, None),
                b'=' => self.push_bond(BondOrder::Double, None),
                b'#' => self.push_bond(BondOrder::Triple, None),
                b':' => self.push_bond(BondOrder::Aromatic, None),
                b'/' => self.push_bond(BondOrder::Single, Some(BondDir::Up)),
                b'\\' => self.push_bond(BondOrder::Single, Some(BondDir::Down)),
                b'.' => return Err(SmilesError::MultiComponent),
                b'0'..=b'9' => {
                    let n = (c - b'0') as u16;
                    let label = (c as char).to_string();
                    self.pos += 1;
                    self.ring_closure(n, label)?;
                }
                b'%' => {
                    let start = self.pos;
                    let d1 = self.bytes.get(self.pos + 1).copied();
                    let d2 = self.bytes.get(self.pos + 2).copied();
                    match (d1, d2) {
                        (Some(a), Some(b)) if a.is_ascii_digit() && b.is_ascii_digit() => {
                            let n = (a - b'0') as u16 * 10 + (b - b'0') as u16;
                            let label = self.text[start..start + 3].to_string();
                            self.pos += 3;
                            self.ring_closure(n, label)?;
                        }
                        _ => {
                            return Err(SmilesError::UnbalancedRing("%".to_string()));
                        }
                    }
                }
                b'[' => {
                    let atom = self.parse_bracket()?;
                    self.add_atom(atom)?;
                }
                _ => {
                    let atom = self.parse_organic()?;
                    self.add_atom(atom)?;
                }
            }
        }
        Ok(())
    }

    fn push_bond(&mut self, order: BondOrder, dir: Option<BondDir>) {
        self.pending = Some(PendingBond { order, dir });
        self.pos += 1;
    }

    /// Atoms of the organic subset, written without brackets.
    fn parse_organic(&mut self) -> Result<Atom, SmilesError> {
        let rest = &self.text[self.pos..];
        let (symbol, aromatic, len) = if rest.starts_with("Cl") {
            ("Cl", false, 2)
        } else if rest.starts_with("Br") {
            ("Br", false, 2)
        } else {
            let c = rest.chars().next().unwrap();
            match c {
                'B' | 'C' | 'N' | 'O' | 'P' | 'S' | 'F' | 'I' => {
                    (&rest[..1], false, 1)
                }
                'b' | 'c' | 'n' | 'o' | 'p' | 's' => (&rest[..1], true, 1),
                _ => {
                    return Err(SmilesError::UnknownAtom(
                        c.to_string(),
                        self.pos,
                    ))
                }
            }
        };
        let element = if aromatic {
            symbol.to_uppercase()
        } else {
            symbol.to_string()
        };
        self.pos += len;
        Ok(Atom {
            element,
            aromatic,
            charge: 0,
            h_count: 0,
            isotope: None,
            chirality: None,
            bracket: false,
        })
    }

    fn parse_bracket(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        let close = match self.bytes[self.pos..].iter().position(|&b| b == b']') {
            Some(off) => self.pos + off,
            None => {
                return Err(SmilesError::UnknownAtom(
                    self.text[open..].to_string(),
                    open,
                ))
            }
        };
        let content = &self.text[open + 1..close];
        let err = || SmilesError::UnknownAtom(format!("[{content}]"), open);
        let b = content.as_bytes();
        let mut i = 0;

        let mut isotope = None;
        let iso_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i > iso_start {
            isotope = Some(content[iso_start..i].parse::<u16>().map_err(|_| err())?);
        }

        let (element, aromatic) = {
            let rest = &content[i..];
            let first = rest.chars().next().ok_or_else(err)?;
            if first.is_ascii_uppercase() {
                let two = if rest.len() >= 2 { &rest[..2] } else { "" };
                if two.len() == 2
                    && two.as_bytes()[1].is_ascii_lowercase()
                    && is_element(two)
                {
                    i += 2;
                    (two.to_string(), false)
                } else if is_element(&rest[..1]) {
                    i += 1;
                    (rest[..1].to_string(), false)
                } else {
                    return Err(err());
                }
            } else if rest.starts_with("se") || rest.starts_with("as") {
                i += 2;
                (rest[..2].to_uppercase(), true)
            } else if matches!(first, 'b' | 'c' | 'n' | 'o' | 'p' | 's') {
                i += 1;
                (first.to_uppercase().to_string(), true)
            } else {
                return Err(err());
            }
        };

        let mut chirality = None;
        if b.get(i) == Some(&b'@') {
            if b.get(i + 1) == Some(&b'@') {
                chirality = Some(Chirality::Clockwise);
                i += 2;
            } else {
                chirality = Some(Chirality::Counterclockwise);
                i += 1;
            }
        }

        let mut h_count = 0u8;
        if b.get(i) == Some(&b'H') {
            i += 1;
            let digits_start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            h_count = if i > digits_start {
                content[digits_start..i].parse::<u8>().map_err(|_| err())?
            } else {
                1
            };
        }

        let mut charge = 0i8;
        if let Some(&sign) = b.get(i) {
            if sign == b'+' || sign == b'-' {
                let unit: i8 = if sign == b'+' { 1 } else { -1 };
                i += 1;
                let digits_start = i;
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
                if i > digits_start {
                    let n = content[digits_start..i].parse::<i8>().map_err(|_| err())?;
                    charge = unit * n;
                } else {
                    charge = unit;
                    while b.get(i) == Some(&sign) {
                        charge += unit;
                        i += 1;
                    }
                }
            }
        }

        if b.get(i) == Some(&b':') {
            i += 1;
            let digits_start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            if i == digits_start {
                return Err(err());
            }
        }

        if i != b.len() {
            return Err(err());
        }

        self.pos = close + 1;
        Ok(Atom {
            element,
            aromatic,
            charge,
            h_count,
            isotope,
            chirality,
            bracket: true,
        })
    }

    fn add_atom(&mut self, atom: Atom) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let pending = self.pending.take();
            let (order, dir) = self.resolve_bond(prev, idx, pending);
            self.bonds.push(Bond {
                a: prev,
                b: idx,
                order,
                dir,
            });
        }
        self.prev = Some(idx);
        Ok(())
    }

    /// A bond with no written symbol is aromatic between two aromatic atoms
    /// and single otherwise.
    fn resolve_bond(
        &self,
        a: usize,
        b: usize,
        pending: Option<PendingBond>,
    ) -> (BondOrder, Option<BondDir>) {
        match pending {
            Some(p) => (p.order, p.dir),
            None => {
                if self.atoms[a].aromatic && self.atoms[b].aromatic {
                    (BondOrder::Aromatic, None)
                } else {
                    (BondOrder::Single, None)
                }
            }
        }
    }

    fn ring_closure(&mut self, number: u16, label: String) -> Result<(), SmilesError> {
        let here = match self.prev {
            Some(at) => at,
            None => return Err(SmilesError::UnbalancedRing(label)),
        };
        let pending = self.pending.take();
        match self.open_rings.remove(&number) {
            Some((there, opened, _)) => {
                if there == here {
                    return Err(SmilesError::UnbalancedRing(label));
                }
                if self
                    .bonds
                    .iter()
                    .any(|bd| (bd.a == there && bd.b == here) || (bd.a == here && bd.b == there))
                {
                    return Err(SmilesError::UnbalancedRing(label));
                }
                let resolved = match (opened, pending) {
                    (Some(x), Some(y)) if x.order != y.order => {
                        return Err(SmilesError::UnbalancedRing(label));
                    }
                    (Some(x), _) => Some(x),
                    (None, y) => y,
                };
                let (order, dir) = self.resolve_bond(there, here, resolved);
                self.bonds.push(Bond {
                    a: there,
                    b: here,
                    order,
                    dir,
                });
            }
            None => {
                self.open_rings.insert(number, (here, pending, label));
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Molecule, SmilesError> {
        if let Some((_, (_, _, label))) = self.open_rings.drain().next() {
            return Err(SmilesError::UnbalancedRing(label));
        }
        if !self.stack.is_empty() {
            return Err(SmilesError::UnbalancedParen(self.text.len()));
        }
        if self.pending.is_some() {
            return Err(SmilesError::UnknownAtom(String::new(), self.text.len()));
        }

        let mut units = vec![0u8; self.atoms.len()];
        for bond in &self.bonds {
            units[bond.a] = units[bond.a].saturating_add(bond.order.valence_units());
            units[bond.b] = units[bond.b].saturating_add(bond.order.valence_units());
        }
        for (i, atom) in self.atoms.iter_mut().enumerate() {
            if atom.bracket {
                continue;
            }
            match implicit_h(&atom.element, atom.aromatic, units[i]) {
                Some(h) => atom.h_count = h,
                None => return Err(SmilesError::ValenceError(i)),
            }
        }

        let (atom_in_ring, bond_in_ring) = mark_rings(self.atoms.len(), &self.bonds);
        Ok(Molecule {
            atoms: self.atoms,
            bonds: self.bonds,
            atom_in_ring,
            bond_in_ring,
        })
    }
}

/// An edge lies on a cycle exactly when it is not a bridge, and an atom lies
/// on a cycle exactly when one of its edges does.
fn mark_rings(n_atoms: usize, bonds: &[Bond]) -> (Vec<bool>, Vec<bool>) {
    let mut adj = vec![Vec::new(); n_atoms];
    for (bi, bond) in bonds.iter().enumerate() {
        adj[bond.a].push((bond.b, bi));
        adj[bond.b].push((bond.a, bi));
    }

    let mut disc = vec![usize::MAX; n_atoms];
    let mut low = vec![0usize; n_atoms];
    let mut bridge = vec![false; bonds.len()];
    let mut timer = 0usize;
    // Iterative DFS; each frame is (atom, incoming bond, next adjacency slot).
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();
    for root in 0..n_atoms {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        stack.push((root, usize::MAX, 0));
        while let Some(frame) = stack.last_mut() {
            let (u, in_bond) = (frame.0, frame.1);
            if frame.2 < adj[u].len() {
                let (v, bi) = adj[u][frame.2];
                frame.2 += 1;
                if bi == in_bond {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, bi, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        bridge[in_bond] = true;
                    }
                }
            }
        }
    }

    let bond_in_ring: Vec<bool> = bridge.iter().map(|&b| !b).collect();
    let mut atom_in_ring = vec![false; n_atoms];
    for (bi, bond) in bonds.iter().enumerate() {
        if bond_in_ring[bi] {
            atom_in_ring[bond.a] = true;
            atom_in_ring[bond.b] = true;
        }
    }
    (atom_in_ring, bond_in_ring)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ethanol() {
        let mol = parse_smiles("CCO").unwrap();
        assert_eq!(mol.atoms.len(), 3);
        assert_eq!(mol.bonds.len(), 2);
        assert_eq!(mol.atoms[0].element, "C");
        assert_eq!(mol.atoms[2].element, "O");
        assert!(mol.bonds.iter().all(|b| b.order == BondOrder::Single));
        assert!(mol.atom_in_ring.iter().all(|&r| !r));
        assert_eq!(mol.atoms[0].h_count, 3);
        assert_eq!(mol.atoms[1].h_count, 2);
        assert_eq!(mol.atoms[2].h_count, 1);
    }

    #[test]
    fn cyclopropane() {
        let mol = parse_smiles("C1CC1").unwrap();
        assert_eq!(mol.atoms.len(), 3);
        assert_eq!(mol.bonds.len(), 3);
        assert!(mol.atom_in_ring.iter().all(|&r| r));
        assert!(mol.bond_in_ring.iter().all(|&r| r));
    }

    #[test]
    fn benzene() {
        let mol = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(mol.atoms.len(), 6);
        assert_eq!(mol.bonds.len(), 6);
        assert!(mol.atoms.iter().all(|a| a.aromatic && a.element == "C"));
        assert!(mol.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
        assert!(mol.atoms.iter().all(|a| a.h_count == 1));
        assert!(mol.atom_in_ring.iter().all(|&r| r));
    }

    #[test]
    fn percent_ring_closure() {
        let a = parse_smiles("C%10CC%10").unwrap();
        let b = parse_smiles("C1CC1").unwrap();
        assert_eq!(a.bonds.len(), b.bonds.len());
        assert!(a.atom_in_ring.iter().all(|&r| r));
    }

    #[test]
    fn bracket_atoms() {
        let mol = parse_smiles("[N+](C)(C)(C)C").unwrap();
        assert_eq!(mol.atoms[0].charge, 1);
        assert_eq!(mol.atoms[0].h_count, 0);
        assert!(mol.atoms[0].bracket);

        let mol = parse_smiles("[13CH4]").unwrap();
        assert_eq!(mol.atoms[0].isotope, Some(13));
        assert_eq!(mol.atoms[0].h_count, 4);

        let mol = parse_smiles("c1cc[nH]c1").unwrap();
        let n = mol.atoms.iter().find(|a| a.element == "N").unwrap();
        assert!(n.aromatic);
        assert_eq!(n.h_count, 1);

        let mol = parse_smiles("[O-]C").unwrap();
        assert_eq!(mol.atoms[0].charge, -1);

        let mol = parse_smiles("[Fe+2]").unwrap();
        assert_eq!(mol.atoms[0].charge, 2);
        assert_eq!(mol.atoms[0].element, "Fe");

        let mol = parse_smiles("[Se]CC").unwrap();
        assert_eq!(mol.atoms[0].element, "Se");
    }

    #[test]
    fn stereo_annotations_preserved() {
        let mol = parse_smiles("C/C=C\\C").unwrap();
        assert_eq!(mol.bonds[0].dir, Some(BondDir::Up));
        assert_eq!(mol.bonds[2].dir, Some(BondDir::Down));

        let mol = parse_smiles("[C@@H](N)(C)O").unwrap();
        assert_eq!(mol.atoms[0].chirality, Some(Chirality::Clockwise));
        let mol = parse_smiles("[C@H](N)(C)O").unwrap();
        assert_eq!(mol.atoms[0].chirality, Some(Chirality::Counterclockwise));
    }

    #[test]
    fn aromatic_hydrogen_assignment() {
        let mol = parse_smiles("Cc1ccccc1").unwrap();
        let junction = &mol.atoms[1];
        assert!(junction.aromatic);
        assert_eq!(junction.h_count, 0);

        let mol = parse_smiles("c1ccncc1").unwrap();
        let n = mol.atoms.iter().find(|a| a.element == "N").unwrap();
        assert_eq!(n.h_count, 0);

        let mol = parse_smiles("c1ccoc1").unwrap();
        let o = mol.atoms.iter().find(|a| a.element == "O").unwrap();
        assert_eq!(o.h_count, 0);
    }

    #[test]
    fn sulfur_valences() {
        let mol = parse_smiles("CS(=O)(=O)C").unwrap();
        let s = mol.atoms.iter().position(|a| a.element == "S").unwrap();
        assert_eq!(mol.atoms[s].h_count, 0);
        let mol = parse_smiles("CSC").unwrap();
        assert_eq!(mol.atoms[1].h_count, 0);
        let mol = parse_smiles("S").unwrap();
        assert_eq!(mol.atoms[0].h_count, 2);
    }

    #[test]
    fn ring_bond_orders() {
        let mol = parse_smiles("C=1CCCCC=1").unwrap();
        assert!(mol.bonds.iter().any(|b| b.order == BondOrder::Double));
        let mol = parse_smiles("C=1CCCCC1").unwrap();
        assert!(mol.bonds.iter().any(|b| b.order == BondOrder::Double));
        assert!(matches!(
            parse_smiles("C=1CCCCC#1"),
            Err(SmilesError::UnbalancedRing(_))
        ));
    }

    #[test]
    fn error_cases() {
        assert!(matches!(
            parse_smiles("C1CC"),
            Err(SmilesError::UnbalancedRing(_))
        ));
        assert!(matches!(
            parse_smiles("C(C"),
            Err(SmilesError::UnbalancedParen(_))
        ));
        assert!(matches!(
            parse_smiles("C)C"),
            Err(SmilesError::UnbalancedParen(_))
        ));
        assert!(matches!(
            parse_smiles("CXC"),
            Err(SmilesError::UnknownAtom(_, _))
        ));
        assert!(matches!(
            parse_smiles("C(C)(C)(C)(C)C"),
            Err(SmilesError::ValenceError(_))
        ));
        assert!(matches!(
            parse_smiles("CC.CC"),
            Err(SmilesError::MultiComponent)
        ));
        assert!(matches!(
            parse_smiles(""),
            Err(SmilesError::UnknownAtom(_, _))
        ));
        assert!(matches!(
            parse_smiles("CC="),
            Err(SmilesError::UnknownAtom(_, _))
        ));
        assert!(matches!(
            parse_smiles("C11"),
            Err(SmilesError::UnbalancedRing(_))
        ));
        assert!(matches!(
            parse_smiles("C12CC12"),
            Err(SmilesError::UnbalancedRing(_))
        ));
    }

    #[test]
    fn fused_rings_membership() {
        let mol = parse_smiles("C1CC2CCC1C2").unwrap();
        assert!(mol.atom_in_ring.iter().all(|&r| r));
        let mol = parse_smiles("CC1CC1").unwrap();
        assert!(!mol.atom_in_ring[0]);
        assert!(mol.atom_in_ring[1]);
        assert!(!mol.bond_in_ring[0]);
    }

    #[test]
    fn nitrogen_valence_five() {
        let mol = parse_smiles("C[N+](C)(C)C").unwrap();
        assert_eq!(mol.atoms[1].h_count, 0);
        let mol = parse_smiles("N(=O)O").unwrap();
        assert_eq!(mol.atoms[0].h_count, 0);
    }
}
