//! Drug-likeness gates: ADMET property bounds and excluded functional
//! groups expressed as small graph queries.

use std::io::Read;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::AdmetProperties;
use crate::smiles::{BondOrder, Molecule};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid motif pattern '{0}': {1}")]
    InvalidPattern(String, String),
    #[error("bounds for {0} have lower > upper")]
    InvalidBounds(&'static str),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Inclusive (lower, upper) windows per property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmetBounds {
    pub molecular_weight: (f64, f64),
    pub hba: (f64, f64),
    pub hbd: (f64, f64),
    pub rotatable_bonds: (f64, f64),
    pub rings: (f64, f64),
    pub heteroatoms: (f64, f64),
    pub formal_charge: (f64, f64),
    pub tpsa: (f64, f64),
    pub log_p: (f64, f64),
}

impl Default for AdmetBounds {
    fn default() -> Self {
        AdmetBounds {
            molecular_weight: (100.0, 600.0),
            hba: (0.0, 12.0),
            hbd: (0.0, 7.0),
            rotatable_bonds: (0.0, 11.0),
            rings: (0.0, 6.0),
            heteroatoms: (1.0, 15.0),
            formal_charge: (-4.0, 4.0),
            tpsa: (0.0, 140.0),
            log_p: (-0.4, 6.5),
        }
    }
}

impl AdmetBounds {
    pub fn validate(&self) -> Result<(), FilterError> {
        let pairs: [(&'static str, (f64, f64)); 9] = [
            ("molecular weight", self.molecular_weight),
            ("HBA", self.hba),
            ("HBD", self.hbd),
            ("rotatable bonds", self.rotatable_bonds),
            ("rings", self.rings),
            ("heteroatoms", self.heteroatoms),
            ("formal charge", self.formal_charge),
            ("TPSA", self.tpsa),
            ("logP", self.log_p),
        ];
        for (name, (lo, hi)) in pairs {
            if lo > hi {
                return Err(FilterError::InvalidBounds(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmetVerdict {
    pub pass: bool,
    pub failing: Vec<&'static str>,
}

/// Check every property against its window. TPSA and logP may be absent
/// (they come from external predictors); absence passes unless `strict`.
pub fn admet_filter(props: &AdmetProperties, bounds: &AdmetBounds, strict: bool) -> AdmetVerdict {
    fn check(failing: &mut Vec<&'static str>, name: &'static str, value: f64, (lo, hi): (f64, f64)) {
        if value < lo || value > hi {
            failing.push(name);
        }
    }
    let mut failing = Vec::new();
    check(
        &mut failing,
        "molecular weight",
        props.molecular_weight,
        bounds.molecular_weight,
    );
    check(&mut failing, "HBA", props.hba as f64, bounds.hba);
    check(&mut failing, "HBD", props.hbd as f64, bounds.hbd);
    check(
        &mut failing,
        "rotatable bonds",
        props.rotatable_bonds as f64,
        bounds.rotatable_bonds,
    );
    check(&mut failing, "rings", props.rings as f64, bounds.rings);
    check(
        &mut failing,
        "heteroatoms",
        props.heteroatoms as f64,
        bounds.heteroatoms,
    );
    check(
        &mut failing,
        "formal charge",
        props.formal_charge as f64,
        bounds.formal_charge,
    );
    match props.tpsa {
        Some(v) => check(&mut failing, "TPSA", v, bounds.tpsa),
        None if strict => failing.push("TPSA"),
        None => {}
    }
    match props.log_p {
        Some(v) => check(&mut failing, "logP", v, bounds.log_p),
        None if strict => failing.push("logP"),
        None => {}
    }
    AdmetVerdict {
        pass: failing.is_empty(),
        failing,
    }
}

/// One query atom. Omitted fields match anything; `h` is an exact
/// hydrogen-count requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotifAtom {
    pub element: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aromatic: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotifBond {
    pub a: usize,
    pub b: usize,
    /// Omitted = any order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<BondOrder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifPattern {
    pub name: String,
    pub atoms: Vec<MotifAtom>,
    pub bonds: Vec<MotifBond>,
}

impl MotifPattern {
    pub fn validate(&self) -> Result<(), FilterError> {
        let n = self.atoms.len();
        let fail = |msg: &str| {
            Err(FilterError::InvalidPattern(
                self.name.clone(),
                msg.to_string(),
            ))
        };
        if n == 0 {
            return fail("no atoms");
        }
        if n > 12 {
            return fail("more than 12 atoms");
        }
        for b in &self.bonds {
            if b.a >= n || b.b >= n || b.a == b.b {
                return fail("bond endpoint out of range");
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for b in &self.bonds {
                for (x, y) in [(b.a, b.b), (b.b, b.a)] {
                    if x == u && !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            return fail("not connected");
        }
        Ok(())
    }
}

pub fn load_motifs<R: Read>(reader: R) -> Result<Vec<MotifPattern>, FilterError> {
    let patterns: Vec<MotifPattern> = serde_json::from_reader(reader)?;
    for p in &patterns {
        p.validate()?;
    }
    Ok(patterns)
}

const DEFAULT_MOTIFS_JSON: &str = include_str!("motifs.json");

/// Built-in exclusion list: azide, nitro, nitroso, aldehyde, ketone,
/// ester, epoxide, isocyanate, thiocyanate, azo, diazo, hydrazine,
/// terminal acetylene, phenol, thiol. Some groups ship with several
/// query graphs covering their common charge spellings.
pub fn default_motifs() -> &'static [MotifPattern] {
    static MOTIFS: OnceLock<Vec<MotifPattern>> = OnceLock::new();
    MOTIFS.get_or_init(|| load_motifs(DEFAULT_MOTIFS_JSON.as_bytes()).unwrap())
}

fn atom_matches(query: &MotifAtom, mol: &Molecule, i: usize) -> bool {
    let atom = &mol.atoms[i];
    query.element == atom.element
        && query.charge.map_or(true, |c| c == atom.charge)
        && query.aromatic.map_or(true, |a| a == atom.aromatic)
        && query.h.map_or(true, |h| h == atom.h_count)
}

fn bond_matches(order: Option<BondOrder>, actual: BondOrder) -> bool {
    order.map_or(true, |o| o == actual)
}

/// True iff the pattern embeds as a (not necessarily induced) subgraph of
/// the molecule, respecting all atom and bond constraints.
pub fn match_motif(mol: &Molecule, pattern: &MotifPattern) -> bool {
    let nq = pattern.atoms.len();
    if nq > mol.atoms.len() {
        return false;
    }
    // Visit query atoms so each one after the first touches a placed atom.
    let mut visit: Vec<usize> = Vec::with_capacity(nq);
    let mut placed = vec![false; nq];
    visit.push(0);
    placed[0] = true;
    while visit.len() < nq {
        let next = pattern
            .bonds
            .iter()
            .find_map(|b| match (placed[b.a], placed[b.b]) {
                (true, false) => Some(b.b),
                (false, true) => Some(b.a),
                _ => None,
            })
            .expect("pattern validated as connected");
        placed[next] = true;
        visit.push(next);
    }

    let adj = mol.adjacency();
    let mut mapping = vec![usize::MAX; nq];
    let mut used = vec![false; mol.atoms.len()];
    backtrack(mol, &adj, pattern, &visit, 0, &mut mapping, &mut used)
}

fn backtrack(
    mol: &Molecule,
    adj: &[Vec<(usize, usize)>],
    pattern: &MotifPattern,
    visit: &[usize],
    depth: usize,
    mapping: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == visit.len() {
        return true;
    }
    let q = visit[depth];
    let q_degree = pattern
        .bonds
        .iter()
        .filter(|b| b.a == q || b.b == q)
        .count();
    'candidates: for t in 0..mol.atoms.len() {
        if used[t] || !atom_matches(&pattern.atoms[q], mol, t) || adj[t].len() < q_degree {
            continue;
        }
        for b in &pattern.bonds {
            let other = if b.a == q {
                b.b
            } else if b.b == q {
                b.a
            } else {
                continue;
            };
            if mapping[other] == usize::MAX {
                continue;
            }
            let found = adj[t]
                .iter()
                .any(|&(nbr, bi)| nbr == mapping[other] && bond_matches(b.order, mol.bonds[bi].order));
            if !found {
                continue 'candidates;
            }
        }
        mapping[q] = t;
        used[t] = true;
        if backtrack(mol, adj, pattern, visit, depth + 1, mapping, used) {
            return true;
        }
        mapping[q] = usize::MAX;
        used[t] = false;
    }
    false
}

/// First pattern that matches, or None when the molecule is clean.
pub fn functional_group_filter<'a>(
    mol: &Molecule,
    patterns: &'a [MotifPattern],
) -> Option<&'a str> {
    patterns
        .iter()
        .find(|p| match_motif(mol, p))
        .map(|p| p.name.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::admet_properties;
    use crate::smiles::{parse_smiles, write_with_order};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn props(smiles: &str) -> AdmetProperties {
        admet_properties(&parse_smiles(smiles).unwrap(), None)
    }

    #[test]
    fn ethanol_fails_weight_floor() {
        let verdict = admet_filter(&props("CCO"), &AdmetBounds::default(), false);
        assert!(!verdict.pass);
        assert!(verdict.failing.contains(&"molecular weight"));
    }

    #[test]
    fn bounds_are_inclusive() {
        let at_edges = AdmetProperties {
            molecular_weight: 100.0,
            hba: 12,
            hbd: 7,
            rotatable_bonds: 11,
            rings: 6,
            heteroatoms: 1,
            formal_charge: -4,
            tpsa: Some(140.0),
            log_p: Some(6.5),
        };
        let verdict = admet_filter(&at_edges, &AdmetBounds::default(), true);
        assert!(verdict.pass, "failing: {:?}", verdict.failing);
    }

    #[test]
    fn charge_out_of_window() {
        let mut p = props("CCO");
        p.molecular_weight = 300.0;
        p.formal_charge = -5;
        let verdict = admet_filter(&p, &AdmetBounds::default(), false);
        assert!(verdict.failing.contains(&"formal charge"));
    }

    #[test]
    fn strict_mode_requires_external_metrics() {
        let mut p = props("CCO");
        p.molecular_weight = 300.0;
        assert!(admet_filter(&p, &AdmetBounds::default(), false).pass);
        let strict = admet_filter(&p, &AdmetBounds::default(), true);
        assert_eq!(strict.failing, vec!["TPSA", "logP"]);
    }

    #[test]
    fn bad_bounds_rejected() {
        let mut b = AdmetBounds::default();
        b.hba = (5.0, 2.0);
        assert!(matches!(b.validate(), Err(FilterError::InvalidBounds("HBA"))));
        assert!(AdmetBounds::default().validate().is_ok());
    }

    fn by_name(name: &str) -> Vec<&'static MotifPattern> {
        default_motifs().iter().filter(|p| p.name == name).collect()
    }

    fn any_match(name: &str, smiles: &str) -> bool {
        let mol = parse_smiles(smiles).unwrap();
        by_name(name).iter().any(|p| match_motif(&mol, p))
    }

    #[test]
    fn nitro_pattern() {
        assert!(any_match("nitro", "C[N+](=O)[O-]"));
        assert!(any_match("nitro", "CN(=O)=O"));
        assert!(!any_match("nitro", "c1ccccc1"));
        assert!(!any_match("nitro", "CC(=O)O"));
    }

    #[test]
    fn each_default_motif_has_a_hit_and_a_miss() {
        let cases = [
            ("azide", "CCN=[N+]=[N-]", "CCNC"),
            ("nitroso", "CN=O", "CCO"),
            ("aldehyde", "CC=O", "CC(=O)C"),
            ("ketone", "CC(=O)C", "CC=O"),
            ("ester", "CC(=O)OC", "CC(=O)O"),
            ("epoxide", "C1CO1", "CCO"),
            ("isocyanate", "CN=C=O", "CC#N"),
            ("thiocyanate", "CSC#N", "CS"),
            ("azo", "CN=NC", "CCNC"),
            ("diazo", "C=[N+]=[N-]", "CC#N"),
            ("hydrazine", "NN", "CN"),
            ("terminal acetylene", "C#CC", "CC#CC"),
            ("phenol", "Oc1ccccc1", "OCc1ccccc1"),
            ("thiol", "CS", "CSC"),
        ];
        for (name, hit, miss) in cases {
            assert!(any_match(name, hit), "{name} should match {hit}");
            assert!(!any_match(name, miss), "{name} should not match {miss}");
        }
    }

    #[test]
    fn identity_embedding() {
        let mol = parse_smiles("CCO").unwrap();
        let pattern = MotifPattern {
            name: "ethanol skeleton".into(),
            atoms: mol
                .atoms
                .iter()
                .map(|a| MotifAtom {
                    element: a.element.clone(),
                    charge: Some(a.charge),
                    aromatic: Some(a.aromatic),
                    h: Some(a.h_count),
                })
                .collect(),
            bonds: mol
                .bonds
                .iter()
                .map(|b| MotifBond {
                    a: b.a,
                    b: b.b,
                    order: Some(b.order),
                })
                .collect(),
        };
        pattern.validate().unwrap();
        assert!(match_motif(&mol, &pattern));
    }

    #[test]
    fn filter_reports_first_matching_name() {
        let azide = parse_smiles("CCN=[N+]=[N-]").unwrap();
        assert_eq!(
            functional_group_filter(&azide, default_motifs()),
            Some("azide")
        );
        assert_eq!(functional_group_filter(&azide, &[]), None);
        let ethane = parse_smiles("CC").unwrap();
        assert_eq!(functional_group_filter(&ethane, default_motifs()), None);
    }

    #[test]
    fn verdicts_invariant_under_atom_permutation() {
        let cases = ["CC(=O)OC", "Oc1ccccc1C=O", "CCN=[N+]=[N-]", "C1CO1"];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for smiles in cases {
            let mol = parse_smiles(smiles).unwrap();
            let reference = functional_group_filter(&mol, default_motifs());
            let mut perm: Vec<u32> = (0..mol.atoms.len() as u32).collect();
            for _ in 0..10 {
                perm.shuffle(&mut rng);
                let rewritten = write_with_order(&mol, &perm);
                let shuffled = parse_smiles(&rewritten).unwrap();
                assert_eq!(
                    functional_group_filter(&shuffled, default_motifs()),
                    reference,
                    "{smiles} via {rewritten}"
                );
            }
        }
    }

    /// Exhaustive injective-mapping check, the slow way.
    fn brute_force(mol: &Molecule, pattern: &MotifPattern) -> bool {
        fn extend(
            mol: &Molecule,
            pattern: &MotifPattern,
            mapping: &mut Vec<usize>,
        ) -> bool {
            let q = mapping.len();
            if q == pattern.atoms.len() {
                return pattern.bonds.iter().all(|b| {
                    mol.bonds.iter().any(|mb| {
                        let ends_match = (mb.a == mapping[b.a] && mb.b == mapping[b.b])
                            || (mb.a == mapping[b.b] && mb.b == mapping[b.a]);
                        ends_match && bond_matches(b.order, mb.order)
                    })
                });
            }
            for t in 0..mol.atoms.len() {
                if mapping.contains(&t) || !atom_matches(&pattern.atoms[q], mol, t) {
                    continue;
                }
                mapping.push(t);
                if extend(mol, pattern, mapping) {
                    return true;
                }
                mapping.pop();
            }
            false
        }
        extend(mol, pattern, &mut Vec::new())
    }

    #[test]
    fn matcher_agrees_with_brute_force() {
        let molecules = [
            "CC(=O)OC",
            "CN=NC",
            "C1CO1",
            "Oc1ccccc1",
            "CCN=[N+]=[N-]",
            "CC(=O)C",
            "NN",
            "C#CC",
            "CSC#N",
            "CN(=O)=O",
        ];
        for smiles in molecules {
            let mol = parse_smiles(smiles).unwrap();
            assert!(mol.atoms.len() <= 10);
            for pattern in default_motifs() {
                assert_eq!(
                    match_motif(&mol, pattern),
                    brute_force(&mol, pattern),
                    "{} vs {}",
                    smiles,
                    pattern.name
                );
            }
        }
    }

    #[test]
    fn loader_validates() {
        assert!(default_motifs().len() >= 15);
        let disconnected = r#"[{"name":"bad","atoms":[{"element":"C"},{"element":"C"}],"bonds":[]}]"#;
        assert!(matches!(
            load_motifs(disconnected.as_bytes()),
            Err(FilterError::InvalidPattern(_, _))
        ));
        let round: Vec<MotifPattern> =
            serde_json::from_str(&serde_json::to_string(default_motifs()).unwrap()).unwrap();
        assert_eq!(round.as_slice(), default_motifs());
    }
}
