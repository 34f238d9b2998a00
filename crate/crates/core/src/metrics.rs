//! Fingerprints, Tanimoto similarity, and the generation-quality and
//! memorization statistics reported for each loop iteration.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{canonical_string, parse_smiles, BondOrder, Molecule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot compare fingerprints of different kinds")]
    KindMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FingerprintKind {
    Circular { radius: u32 },
    Path { maxlen: u32 },
}

/// Sparse hashed feature set. Feature ids come from 64-bit FNV-1a
/// truncated to 32 bits, so fingerprints are stable across runs and
/// platforms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub kind: FingerprintKind,
    pub features: BTreeSet<u32>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn truncate(h: u64) -> u32 {
    (h ^ (h >> 32)) as u32
}

fn bond_byte(order: BondOrder) -> u8 {
    match order {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

fn initial_atom_id(mol: &Molecule, i: usize) -> u32 {
    let atom = &mol.atoms[i];
    let mut bytes = Vec::with_capacity(atom.element.len() + 5);
    bytes.extend_from_slice(atom.element.as_bytes());
    bytes.push(0x1f);
    bytes.push(atom.charge as u8);
    bytes.push(mol.degree(i) as u8);
    bytes.push(atom.h_count);
    bytes.push(atom.aromatic as u8);
    bytes.push(mol.atom_in_ring[i] as u8);
    truncate(fnv1a(&bytes))
}

/// Iterative neighborhood hashing: atom invariants are combined with
/// sorted (bond, neighbor id) lists for `radius` rounds, and the ids from
/// every round are collected.
pub fn circular_fingerprint(mol: &Molecule, radius: u32) -> Fingerprint {
    let n = mol.atoms.len();
    let adj = mol.adjacency();
    let mut ids: Vec<u32> = (0..n).map(|i| initial_atom_id(mol, i)).collect();
    let mut features: BTreeSet<u32> = ids.iter().copied().collect();
    for _ in 0..radius {
        let mut next = vec![0u32; n];
        for i in 0..n {
            let mut env: Vec<(u8, u32)> = adj[i]
                .iter()
                .map(|&(j, bi)| (bond_byte(mol.bonds[bi].order), ids[j]))
                .collect();
            env.sort_unstable();
            let mut bytes = Vec::with_capacity(4 + env.len() * 5);
            bytes.extend_from_slice(&ids[i].to_le_bytes());
            for (b, id) in env {
                bytes.push(b);
                bytes.extend_from_slice(&id.to_le_bytes());
            }
            next[i] = truncate(fnv1a(&bytes));
        }
        ids = next;
        features.extend(ids.iter().copied());
    }
    Fingerprint {
        kind: FingerprintKind::Circular { radius },
        features,
    }
}

fn path_feature(mol: &Molecule, atoms: &[usize], bonds: &[usize]) -> u32 {
    let encode = |atom_iter: &mut dyn Iterator<Item = usize>,
                  bond_iter: &mut dyn Iterator<Item = usize>| {
        let mut bytes = Vec::new();
        let mut next_bond = bond_iter.next();
        for (step, i) in atom_iter.enumerate() {
            if step > 0 {
                bytes.push(bond_byte(mol.bonds[next_bond.unwrap()].order));
                next_bond = bond_iter.next();
            }
            bytes.extend_from_slice(mol.atoms[i].element.as_bytes());
            bytes.push(if mol.atoms[i].aromatic { b'a' } else { b'.' });
        }
        fnv1a(&bytes)
    };
    let fwd = encode(&mut atoms.iter().copied(), &mut bonds.iter().copied());
    let rev = encode(
        &mut atoms.iter().rev().copied(),
        &mut bonds.iter().rev().copied(),
    );
    truncate(fwd.min(rev))
}

fn walk_paths(
    mol: &Molecule,
    adj: &[Vec<(usize, usize)>],
    maxlen: u32,
    atoms: &mut Vec<usize>,
    bonds: &mut Vec<usize>,
    out: &mut dyn FnMut(&[usize], &[usize]),
) {
    let last = *atoms.last().unwrap();
    if bonds.len() as u32 == maxlen {
        return;
    }
    for &(j, bi) in &adj[last] {
        if atoms.contains(&j) {
            continue;
        }
        atoms.push(j);
        bonds.push(bi);
        // Count each undirected path once, from its lower-indexed end.
        if atoms[0] < j {
            out(atoms, bonds);
        }
        walk_paths(mol, adj, maxlen, atoms, bonds, out);
        atoms.pop();
        bonds.pop();
    }
}

fn for_each_path(mol: &Molecule, maxlen: u32, out: &mut dyn FnMut(&[usize], &[usize])) {
    let adj = mol.adjacency();
    for start in 0..mol.atoms.len() {
        let mut atoms = vec![start];
        let mut bonds = Vec::new();
        out(&atoms, &bonds);
        walk_paths(mol, &adj, maxlen, &mut atoms, &mut bonds, out);
    }
}

/// Hash every simple bond path of up to `maxlen` bonds (single atoms
/// included), direction-independently.
pub fn path_fingerprint(mol: &Molecule, maxlen: u32) -> Fingerprint {
    let mut features = BTreeSet::new();
    for_each_path(mol, maxlen, &mut |atoms, bonds| {
        features.insert(path_feature(mol, atoms, bonds));
    });
    Fingerprint {
        kind: FingerprintKind::Path { maxlen },
        features,
    }
}

/// Number of distinct simple paths the path fingerprint hashes, atoms
/// included, before any id collapsing.
pub fn path_count(mol: &Molecule, maxlen: u32) -> usize {
    let mut count = 0;
    for_each_path(mol, maxlen, &mut |_, _| count += 1);
    count
}

/// Jaccard overlap of the feature sets; 1.0 for two empty fingerprints.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, MetricsError> {
    if a.kind != b.kind {
        return Err(MetricsError::KindMismatch);
    }
    let intersection = a.features.intersection(&b.features).count();
    let union = a.features.len() + b.features.len() - intersection;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(intersection as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub total: usize,
    pub valid: usize,
    pub unique: usize,
    pub novel: usize,
    /// Parseable fraction of all strings.
    pub validity: f64,
    /// Distinct canonical forms over valid strings.
    pub uniqueness: f64,
    /// Unique molecules absent from the training set.
    pub novelty: f64,
    /// Set when a denominator was zero and the dependent ratios were
    /// reported as 0.
    pub degenerate: bool,
}

/// Validity / uniqueness / novelty over a generated batch. Training-set
/// entries must already be canonical strings.
pub fn generation_metrics(generated: &[String], training: &HashSet<String>) -> GenerationMetrics {
    let total = generated.len();
    let mut canon: Vec<String> = Vec::new();
    for s in generated {
        if let Ok(mol) = parse_smiles(s) {
            canon.push(canonical_string(&mol));
        }
    }
    let valid = canon.len();
    let unique: BTreeSet<String> = canon.into_iter().collect();
    let novel = unique.iter().filter(|s| !training.contains(*s)).count();

    let mut degenerate = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let validity = ratio(valid, total);
    let uniqueness = ratio(unique.len(), valid);
    let novelty = ratio(novel, unique.len());
    GenerationMetrics {
        total,
        valid,
        unique: unique.len(),
        novel,
        validity,
        uniqueness,
        novelty,
        degenerate,
    }
}

/// The four between-iteration memorization percentages: how much of the
/// new generation restates the previous training or scored set, and how
/// much of each previous set the generation covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub generated_in_training_pct: f64,
    pub generated_in_scored_pct: f64,
    pub training_covered_pct: f64,
    pub scored_covered_pct: f64,
}

pub fn memorization_report(
    generated: &[String],
    prev_training: &[String],
    prev_scored: &[String],
) -> MemorizationReport {
    let training: HashSet<&str> = prev_training.iter().map(String::as_str).collect();
    let scored: HashSet<&str> = prev_scored.iter().map(String::as_str).collect();
    let generated_set: HashSet<&str> = generated.iter().map(String::as_str).collect();

    let pct = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    let in_training = generated
        .iter()
        .filter(|s| training.contains(s.as_str()))
        .count();
    let in_scored = generated
        .iter()
        .filter(|s| scored.contains(s.as_str()))
        .count();
    let training_covered = training
        .iter()
        .filter(|s| generated_set.contains(*s))
        .count();
    let scored_covered = scored.iter().filter(|s| generated_set.contains(*s)).count();
    MemorizationReport {
        generated_in_training_pct: pct(in_training, generated.len()),
        generated_in_scored_pct: pct(in_scored, generated.len()),
        training_covered_pct: pct(training_covered, training.len()),
        scored_covered_pct: pct(scored_covered, scored.len()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub reference: String,
    pub mean: f64,
    pub max: f64,
    pub argmax: String,
}

/// Per-reference mean and best Tanimoto against a molecule set; the
/// machinery behind iteration-over-iteration similarity trends.
pub fn similarity_report(
    references: &[(String, Fingerprint)],
    molecules: &[(String, Fingerprint)],
) -> Result<Vec<SimilarityRow>, MetricsError> {
    let mut rows = Vec::with_capacity(references.len());
    for (name, ref_fp) in references {
        let mut sum = 0.0;
        let mut best = f64::MIN;
        let mut argmax = String::new();
        for (smiles, fp) in molecules {
            let t = tanimoto(ref_fp, fp)?;
            sum += t;
            if t > best {
                best = t;
                argmax = smiles.clone();
            }
        }
        let mean = if molecules.is_empty() {
            0.0
        } else {
            sum / molecules.len() as f64
        };
        rows.push(SimilarityRow {
            reference: name.clone(),
            mean,
            max: if molecules.is_empty() { 0.0 } else { best },
            argmax,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::write_with_order;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fp(smiles: &str) -> Fingerprint {
        circular_fingerprint(&parse_smiles(smiles).unwrap(), 2)
    }

    #[test]
    fn identical_molecules_identical_fingerprints() {
        assert_eq!(fp("CCO"), fp("OCC"));
        let a = path_fingerprint(&parse_smiles("c1ccccc1O").unwrap(), 7);
        let b = path_fingerprint(&parse_smiles("Oc1ccccc1").unwrap(), 7);
        assert_eq!(a, b);
    }

    #[test]
    fn permutation_invariance() {
        let mol = parse_smiles("CC(=O)Oc1ccccc1C(=O)O").unwrap();
        let circ = circular_fingerprint(&mol, 2);
        let path = path_fingerprint(&mol, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut perm: Vec<u32> = (0..mol.atoms.len() as u32).collect();
        for _ in 0..10 {
            perm.shuffle(&mut rng);
            let shuffled = parse_smiles(&write_with_order(&mol, &perm)).unwrap();
            assert_eq!(circular_fingerprint(&shuffled, 2), circ);
            assert_eq!(path_fingerprint(&shuffled, 7), path);
        }
    }

    #[test]
    fn shared_and_distinct_environments() {
        let ethanol = fp("CCO");
        let propane = fp("CCC");
        let shared: Vec<&u32> = ethanol.features.intersection(&propane.features).collect();
        assert!(!shared.is_empty(), "carbon features should coincide");
        let diff: Vec<&u32> = ethanol
            .features
            .symmetric_difference(&propane.features)
            .collect();
        assert!(!diff.is_empty(), "oxygen environments should differ");
    }

    #[test]
    fn single_atom_path_fingerprint() {
        let methane = parse_smiles("C").unwrap();
        let f = path_fingerprint(&methane, 7);
        assert_eq!(f.features.len(), 1);
        assert_eq!(path_count(&methane, 7), 1);
    }

    #[test]
    fn linear_alkane_path_count() {
        // Sum over path lengths 0..=maxlen of (n - length).
        let decane = parse_smiles("CCCCCCCCCC").unwrap();
        let expected: usize = (0..=7).map(|l| 10 - l).sum();
        assert_eq!(path_count(&decane, 7), expected);
        // All paths of one length collapse to a single hashed feature.
        let f = path_fingerprint(&decane, 7);
        assert_eq!(f.features.len(), 8);
    }

    #[test]
    fn tanimoto_basics() {
        let kind = FingerprintKind::Path { maxlen: 7 };
        let make = |ids: &[u32]| Fingerprint {
            kind,
            features: ids.iter().copied().collect(),
        };
        assert_eq!(tanimoto(&make(&[1, 2, 3]), &make(&[1, 2, 3])).unwrap(), 1.0);
        assert_eq!(tanimoto(&make(&[1, 2]), &make(&[3, 4])).unwrap(), 0.0);
        assert_eq!(tanimoto(&make(&[1, 2, 3]), &make(&[2, 3, 4])).unwrap(), 0.5);
        assert_eq!(tanimoto(&make(&[]), &make(&[])).unwrap(), 1.0);
    }

    #[test]
    fn tanimoto_symmetric_and_reflexive() {
        let a = fp("CC(=O)Oc1ccccc1C(=O)O");
        let b = fp("c1ccccc1N");
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        let ab = tanimoto(&a, &b).unwrap();
        let ba = tanimoto(&b, &a).unwrap();
        assert_eq!(ab.to_bits(), ba.to_bits());
        assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn kind_mismatch_rejected() {
        let circ = fp("CCO");
        let path = path_fingerprint(&parse_smiles("CCO").unwrap(), 7);
        assert_eq!(tanimoto(&circ, &path), Err(MetricsError::KindMismatch));
        let r2 = circular_fingerprint(&parse_smiles("CCO").unwrap(), 3);
        assert_eq!(tanimoto(&circ, &r2), Err(MetricsError::KindMismatch));
    }

    #[test]
    fn generation_metrics_fixture() {
        // 10 strings: 2 invalid, one duplicate pair among the valid, and 3
        // of the 7 unique molecules sit in the training set.
        let generated: Vec<String> = [
            "CCO", "OCC", "CCC", "CCCC", "CCCCC", "c1ccccc1", "CCN", "CCCO", "C(", "X[",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let training: HashSet<String> = ["CCC", "CCCC", "CCCCC"]
            .iter()
            .map(|s| canonical_string(&parse_smiles(s).unwrap()))
            .collect();
        let m = generation_metrics(&generated, &training);
        assert_eq!(m.total, 10);
        assert_eq!(m.valid, 8);
        assert_eq!(m.unique, 7);
        assert_eq!(m.novel, 4);
        assert!((m.validity - 0.8).abs() < 1e-12);
        assert!((m.uniqueness - 7.0 / 8.0).abs() < 1e-12);
        assert!((m.novelty - 4.0 / 7.0).abs() < 1e-12);
        assert!(!m.degenerate);
    }

    #[test]
    fn generation_metrics_degenerate_cases() {
        let bad: Vec<String> = vec!["((".into(), ")".into()];
        let m = generation_metrics(&bad, &HashSet::new());
        assert_eq!(m.validity, 0.0);
        assert_eq!(m.uniqueness, 0.0);
        assert_eq!(m.novelty, 0.0);
        assert!(m.degenerate);

        let train: HashSet<String> = ["CCO", "CCC"]
            .iter()
            .map(|s| canonical_string(&parse_smiles(s).unwrap()))
            .collect();
        let exact: Vec<String> = train.iter().cloned().collect();
        let m = generation_metrics(&exact, &train);
        assert_eq!(m.novelty, 0.0);
        assert!(!m.degenerate);
    }

    #[test]
    fn memorization_fixture() {
        let generated: Vec<String> = ["a", "b", "b", "c", "d"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let training: Vec<String> = ["b", "x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let scored: Vec<String> = ["c", "d", "w"].iter().map(|s| s.to_string()).collect();
        let r = memorization_report(&generated, &training, &scored);
        // 2 of 5 generated entries are in training, 2 of 5 in scored.
        assert!((r.generated_in_training_pct - 40.0).abs() < 1e-12);
        assert!((r.generated_in_scored_pct - 40.0).abs() < 1e-12);
        // 1 of 4 training molecules and 2 of 3 scored appear in generations.
        assert!((r.training_covered_pct - 25.0).abs() < 1e-12);
        assert!((r.scored_covered_pct - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_rows_rank_related_sets() {
        let reference = vec![("c1ccccc1".to_string(), fp("c1ccccc1"))];
        let aromatics = vec![
            ("Cc1ccccc1".to_string(), fp("Cc1ccccc1")),
            ("c1ccccc1O".to_string(), fp("c1ccccc1O")),
        ];
        let alkanes = vec![
            ("CCCC".to_string(), fp("CCCC")),
            ("CCCCCC".to_string(), fp("CCCCCC")),
        ];
        let close = similarity_report(&reference, &aromatics).unwrap();
        let far = similarity_report(&reference, &alkanes).unwrap();
        assert!(close[0].mean > far[0].mean);
        assert!(close[0].max > far[0].max);
        assert!(!close[0].argmax.is_empty());
    }
}
