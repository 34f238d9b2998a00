//! Smallest set of smallest rings.

use std::collections::VecDeque;

use crate::smiles::{canonical_order, Molecule};

/// Ring basis as sorted bond-index lists. Candidates are the shortest cycles
/// through each in-cycle bond; they are taken smallest first, ties broken by
/// the canonical atom order, and kept only when independent (xor over edge
/// sets) until bonds - atoms + 1 rings are chosen. The tie-breaking makes
/// the selection a pure graph invariant, independent of input atom order.
pub fn sssr(mol: &Molecule) -> Vec<Vec<usize>> {
    let n = mol.atoms.len();
    let cyclomatic = (mol.bonds.len() + 1).saturating_sub(n);
    if cyclomatic == 0 {
        return Vec::new();
    }
    let order = canonical_order(mol);

    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (bi, bond) in mol.bonds.iter().enumerate() {
        if mol.bond_in_ring[bi] {
            adj[bond.a].push((bond.b, bi));
            adj[bond.b].push((bond.a, bi));
        }
    }
    for list in adj.iter_mut() {
        list.sort_by_key(|&(j, _)| order[j]);
    }

    let mut candidates: Vec<Vec<usize>> = Vec::new();
    for (bi, bond) in mol.bonds.iter().enumerate() {
        if !mol.bond_in_ring[bi] {
            continue;
        }
        let (src, dst) = if order[bond.a] <= order[bond.b] {
            (bond.a, bond.b)
        } else {
            (bond.b, bond.a)
        };
        if let Some(mut cycle) = shortest_path(&adj, src, dst, bi) {
            cycle.push(bi);
            cycle.sort_unstable();
            candidates.push(cycle);
        }
    }
    candidates.sort();
    candidates.dedup();
    candidates.sort_by(|a, b| {
        (a.len(), ring_key(a, mol, &order)).cmp(&(b.len(), ring_key(b, mol, &order)))
    });

    let words = mol.bonds.len() / 64 + 1;
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
    let mut chosen = Vec::new();
    for cand in candidates {
        if chosen.len() == cyclomatic {
            break;
        }
        let mut v = vec![0u64; words];
        for &bi in &cand {
            v[bi / 64] |= 1 << (bi % 64);
        }
        for (pivot, row) in &basis {
            if v[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (w, r) in v.iter_mut().zip(row) {
                    *w ^= r;
                }
            }
        }
        if let Some(pivot) = first_set_bit(&v) {
            basis.push((pivot, v));
            chosen.push(cand);
        }
    }
    debug_assert_eq!(chosen.len(), cyclomatic);
    chosen
}

/// Sorted canonical-rank edge list, used to order same-size candidates.
fn ring_key(cycle: &[usize], mol: &Molecule, order: &[u32]) -> Vec<(u32, u32)> {
    let mut key: Vec<(u32, u32)> = cycle
        .iter()
        .map(|&bi| {
            let bond = &mol.bonds[bi];
            let (x, y) = (order[bond.a], order[bond.b]);
            (x.min(y), x.max(y))
        })
        .collect();
    key.sort_unstable();
    key
}

/// Shortest path between the endpoints of a bond that avoids the bond
/// itself, returned as bond indices. Expansion follows the pre-sorted
/// adjacency, so the path choice is deterministic.
fn shortest_path(
    adj: &[Vec<(usize, usize)>],
    src: usize,
    dst: usize,
    skip: usize,
) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    seen[src] = true;
    queue.push_back(src);
    while let Some(u) = queue.pop_front() {
        if u == dst {
            break;
        }
        for &(v, bi) in &adj[u] {
            if bi == skip || seen[v] {
                continue;
            }
            seen[v] = true;
            parent[v] = Some((u, bi));
            queue.push_back(v);
        }
    }
    if !seen[dst] {
        return None;
    }
    let mut path = Vec::new();
    let mut at = dst;
    while let Some((prev, bi)) = parent[at] {
        path.push(bi);
        at = prev;
    }
    Some(path)
}

fn first_set_bit(v: &[u64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .find(|(_, &w)| w != 0)
        .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}
