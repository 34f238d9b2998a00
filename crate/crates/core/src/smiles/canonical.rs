//! Deterministic canonical SMILES for deduplication.
//!
//! Atoms are ranked by iterative neighborhood refinement starting from
//! (element, aromatic flag, charge, hydrogen count, degree, isotope). Ties
//! that survive refinement are broken by trying each tied atom first and
//! keeping the lexicographically smallest emitted string, so the output is
//! invariant under atom reordering of the input. Stereo annotations are
//! dropped: two inputs differing only in stereo map to the same string.

use std::collections::BTreeSet;

use super::parser::implicit_h_for_emission;
use super::{Atom, BondOrder, Molecule};

pub fn canonical_string(mol: &Molecule) -> String {
    canonical(mol).0
}

/// A permutation-invariant total order on the atoms: the rank assignment
/// behind the winning canonical string. Useful wherever a deterministic
/// atom ordering is needed, such as ring perception tie-breaking.
pub fn canonical_order(mol: &Molecule) -> Vec<u32> {
    canonical(mol).1
}

fn canonical(mol: &Molecule) -> (String, Vec<u32>) {
    let adj = mol.adjacency();
    let init = initial_ranks(mol);
    let ranks = refine(mol, &adj, init);
    disambiguate(mol, &adj, ranks)
}

/// Write the molecule as SMILES visiting atoms by the given priority order,
/// which must assign a distinct value to every atom. Produces alternative
/// but parse-equivalent spellings, e.g. for shuffling test inputs.
pub fn write_with_order(mol: &Molecule, order: &[u32]) -> String {
    emit(mol, order)
}

fn bond_key(order: BondOrder) -> u8 {
    match order {
        BondOrder::Single => 0,
        BondOrder::Aromatic => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
    }
}

fn dense_ranks<T: Ord + Clone>(keys: &[T]) -> Vec<u32> {
    let mut sorted: Vec<T> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).unwrap() as u32)
        .collect()
}

fn initial_ranks(mol: &Molecule) -> Vec<u32> {
    let keys: Vec<(String, bool, i8, u8, usize, Option<u16>)> = mol
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            (
                a.element.clone(),
                a.aromatic,
                a.charge,
                a.h_count,
                mol.degree(i),
                a.isotope,
            )
        })
        .collect();
    dense_ranks(&keys)
}

fn distinct(ranks: &[u32]) -> usize {
    let mut seen: Vec<u32> = ranks.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

fn refine(mol: &Molecule, adj: &[Vec<(usize, usize)>], mut ranks: Vec<u32>) -> Vec<u32> {
    loop {
        let keys: Vec<(u32, Vec<(u8, u32)>)> = (0..ranks.len())
            .map(|i| {
                let mut nb: Vec<(u8, u32)> = adj[i]
                    .iter()
                    .map(|&(j, bi)| (bond_key(mol.bonds[bi].order), ranks[j]))
                    .collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        let new = dense_ranks(&keys);
        if distinct(&new) == distinct(&ranks) {
            return new;
        }
        ranks = new;
    }
}

fn disambiguate(
    mol: &Molecule,
    adj: &[Vec<(usize, usize)>],
    ranks: Vec<u32>,
) -> (String, Vec<u32>) {
    let n = ranks.len();
    let mut counts = vec![0usize; n];
    for &r in &ranks {
        counts[r as usize] += 1;
    }
    let tied = (0..n).find(|&r| counts[r] > 1);
    let Some(tied) = tied else {
        return (emit(mol, &ranks), ranks);
    };
    let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == tied as u32).collect();
    members
        .iter()
        .map(|&m| {
            let mut split: Vec<u32> = ranks.iter().map(|&x| x * 2).collect();
            for &o in &members {
                if o != m {
                    split[o] += 1;
                }
            }
            let refined = refine(mol, adj, split);
            disambiguate(mol, adj, refined)
        })
        .min_by(|a, b| a.0.cmp(&b.0))
        .unwrap()
}

/// Write one SMILES string for the molecule with atom priority given by
/// `ranks`, which must assign a distinct rank to every atom. The lowest
/// ranked terminal atom starts the string (lowest rank overall when every
/// atom has two or more neighbors); neighbors are visited in rank order.
pub(super) fn emit(mol: &Molecule, ranks: &[u32]) -> String {
    let n = mol.atoms.len();
    let mut adj = mol.adjacency();
    for list in adj.iter_mut() {
        list.sort_by_key(|&(j, _)| ranks[j]);
    }
    let start = (0..n)
        .min_by_key(|&i| (mol.degree(i) > 1, ranks[i]))
        .unwrap();

    // Pass 1: spanning tree in rank order; leftover edges are ring closures.
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut is_ring_closure = vec![false; mol.bonds.len()];
    let mut is_tree = vec![false; mol.bonds.len()];
    let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
    visited[start] = true;
    order.push(start);
    while let Some(frame) = stack.last_mut() {
        let u = frame.0;
        if frame.1 < adj[u].len() {
            let (v, bi) = adj[u][frame.1];
            frame.1 += 1;
            if is_tree[bi] || is_ring_closure[bi] {
                continue;
            }
            if visited[v] {
                is_ring_closure[bi] = true;
            } else {
                is_tree[bi] = true;
                visited[v] = true;
                order.push(v);
                children[u].push((v, bi));
                stack.push((v, 0));
            }
        } else {
            stack.pop();
        }
    }

    let mut ring_at: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (bi, &ring) in is_ring_closure.iter().enumerate() {
        if ring {
            let bond = &mol.bonds[bi];
            ring_at[bond.a].push((bi, bond.b));
            ring_at[bond.b].push((bi, bond.a));
        }
    }
    for list in ring_at.iter_mut() {
        list.sort_by_key(|&(_, partner)| ranks[partner]);
    }

    // Pass 2: emit in the same order, assigning closure digits as they open.
    let mut out = String::new();
    let mut digit_of = vec![0u16; mol.bonds.len()];
    let mut open = vec![false; mol.bonds.len()];
    let mut freed: BTreeSet<u16> = BTreeSet::new();
    let mut next_digit: u16 = 1;
    write_atom(
        mol,
        start,
        &children,
        &ring_at,
        &mut out,
        &mut digit_of,
        &mut open,
        &mut freed,
        &mut next_digit,
    );
    out
}

#[allow(clippy::too_many_arguments)]
fn write_atom(
    mol: &Molecule,
    u: usize,
    children: &[Vec<(usize, usize)>],
    ring_at: &[Vec<(usize, usize)>],
    out: &mut String,
    digit_of: &mut [u16],
    open: &mut [bool],
    freed: &mut BTreeSet<u16>,
    next_digit: &mut u16,
) {
    out.push_str(&atom_text(&mol.atoms[u], mol.bond_units(u)));
    for &(bi, _) in &ring_at[u] {
        if open[bi] {
            push_digit(out, digit_of[bi]);
            open[bi] = false;
            freed.insert(digit_of[bi]);
        } else {
            let d = match freed.iter().next().copied() {
                Some(d) => {
                    freed.remove(&d);
                    d
                }
                None => {
                    let d = *next_digit;
                    *next_digit += 1;
                    d
                }
            };
            digit_of[bi] = d;
            open[bi] = true;
            out.push_str(bond_text(mol, bi));
            push_digit(out, d);
        }
    }
    let kids = &children[u];
    for (k, &(v, bi)) in kids.iter().enumerate() {
        let last = k + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push_str(bond_text(mol, bi));
        write_atom(
            mol, v, children, ring_at, out, digit_of, open, freed, next_digit,
        );
        if !last {
            out.push(')');
        }
    }
}

fn push_digit(out: &mut String, d: u16) {
    if d < 10 {
        out.push((b'0' + d as u8) as char);
    } else {
        out.push_str(&format!("%{d:02}"));
    }
}

fn bond_text(mol: &Molecule, bi: usize) -> &'static str {
    let bond = &mol.bonds[bi];
    let both_aromatic = mol.atoms[bond.a].aromatic && mol.atoms[bond.b].aromatic;
    match bond.order {
        BondOrder::Single => {
            if both_aromatic {
                "-"
            } else {
                ""
            }
        }
        BondOrder::Aromatic => {
            if both_aromatic {
                ""
            } else {
                ":"
            }
        }
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

fn organic_subset(element: &str, aromatic: bool) -> bool {
    if aromatic {
        matches!(element, "B" | "C" | "N" | "O" | "P" | "S")
    } else {
        matches!(
            element,
            "B" | "C" | "N" | "O" | "P" | "S" | "F" | "Cl" | "Br" | "I"
        )
    }
}

fn atom_text(atom: &Atom, units: u8) -> String {
    let symbol = if atom.aromatic {
        atom.element.to_lowercase()
    } else {
        atom.element.clone()
    };
    let bare_ok = atom.isotope.is_none()
        && atom.charge == 0
        && organic_subset(&atom.element, atom.aromatic)
        && implicit_h_for_emission(&atom.element, atom.aromatic, units) == Some(atom.h_count);
    if bare_ok {
        return symbol;
    }
    let mut out = String::from("[");
    if let Some(iso) = atom.isotope {
        out.push_str(&iso.to_string());
    }
    out.push_str(&symbol);
    match atom.h_count {
        0 => {}
        1 => out.push('H'),
        h => out.push_str(&format!("H{h}")),
    }
    match atom.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("-{}", -c)),
    }
    out.push(']');
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_smiles;
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn canon(s: &str) -> String {
        canonical_string(&parse_smiles(s).unwrap())
    }

    #[test]
    fn atom_order_equivalence() {
        assert_eq!(canon("OCC"), canon("CCO"));
        assert_eq!(canon("C(C)O"), canon("CCO"));
        assert_eq!(canon("C1CC1"), canon("C2CC2"));
        assert_eq!(canon("c1ccccc1"), canon("c1ccccc1"));
    }

    #[test]
    fn permutation_invariance() {
        let mol = parse_smiles("CCOC(=O)c1ccccc1N").unwrap();
        assert_eq!(mol.atoms.len(), 12);
        let reference = canonical_string(&mol);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut perm: Vec<u32> = (0..mol.atoms.len() as u32).collect();
        for _ in 0..50 {
            perm.shuffle(&mut rng);
            let rewritten = emit(&mol, &perm);
            let reparsed = parse_smiles(&rewritten).unwrap();
            assert_eq!(canonical_string(&reparsed), reference, "via {rewritten}");
        }
    }

    #[test]
    fn idempotence() {
        let cases = [
            "CCO",
            "c1ccccc1",
            "CC(=O)Oc1ccccc1C(=O)O",
            "[NH3+]CC([O-])=O",
            "C/C=C\\C",
            "[13CH4]",
            "c1cc[nH]c1",
            "C1CC2CCC1C2",
            "[Se]CC",
            "N#Cc1ccc(Cl)cc1",
            "[C@@H](N)(C)O",
            "c1ccc(-c2ccccc2)cc1",
            "O=C(O)c1ccccc1",
            "C%12CCCCC%12",
        ];
        for s in cases {
            let first = canon(s);
            let second = canon(&first);
            assert_eq!(first, second, "not a fixed point for {s}");
        }
    }

    #[test]
    fn stereo_is_dropped() {
        assert_eq!(canon("C/C=C\\C"), canon("CC=CC"));
        assert_eq!(canon("[C@@H](N)(C)O"), canon("[CH](N)(C)O"));
    }

    #[test]
    fn biphenyl_single_bond_survives() {
        let s = canon("c1ccc(-c2ccccc2)cc1");
        let mol = parse_smiles(&s).unwrap();
        let singles = mol
            .bonds
            .iter()
            .filter(|b| b.order == BondOrder::Single)
            .count();
        assert_eq!(singles, 1);
        assert_eq!(mol.bonds.len(), 13);
    }

    #[test]
    fn symmetric_molecules() {
        assert_eq!(canon("CC(C)C"), canon("C(C)(C)C"));
        assert_eq!(canon("c1ccc2ccccc2c1"), canon("c1ccc2ccccc2c1"));
        let naph_a = canon("c1ccc2ccccc2c1");
        let naph_b = canon("c2ccc1ccccc1c2");
        assert_eq!(naph_a, naph_b);
    }
}
