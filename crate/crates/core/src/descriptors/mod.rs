//! Molecular descriptors: native graph counts, ADMET properties, and
//! ingestion of externally computed descriptor tables.

mod rings;
mod table;

pub use rings::sssr;
pub use table::{ingest_descriptor_table, DescriptorTable};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{BondOrder, Molecule};

pub const MQN_SCHEMA: &str = "mqn42";
pub const MQN_LEN: usize = 42;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("non-finite value at position {0} of a descriptor vector")]
    NonFinite(usize),
    #[error("header must start with a \"smiles\" column")]
    BadHeader,
    #[error("row {0} has a different column count than the header")]
    SchemaMismatch(usize),
    #[error("duplicate key {0} with differing values")]
    DuplicateKey(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Fixed-length vector of finite descriptor values plus a schema id naming
/// the descriptor set it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorVector {
    values: Vec<f64>,
    schema: String,
}

impl DescriptorVector {
    pub fn new(values: Vec<f64>, schema: impl Into<String>) -> Result<Self, DescriptorError> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite(pos));
        }
        Ok(DescriptorVector {
            values,
            schema: schema.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn schema(&self) -> &str {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmetProperties {
    pub molecular_weight: f64,
    pub hba: u32,
    pub hbd: u32,
    pub rotatable_bonds: u32,
    pub rings: u32,
    pub heteroatoms: u32,
    pub formal_charge: i32,
    pub tpsa: Option<f64>,
    pub log_p: Option<f64>,
}

fn atomic_weight(element: &str) -> f64 {
    match element {
        "H" => 1.008,
        "He" => 4.0026,
        "Li" => 6.94,
        "Be" => 9.0122,
        "B" => 10.81,
        "C" => 12.011,
        "N" => 14.007,
        "O" => 15.999,
        "F" => 18.998,
        "Ne" => 20.180,
        "Na" => 22.990,
        "Mg" => 24.305,
        "Al" => 26.982,
        "Si" => 28.085,
        "P" => 30.974,
        "S" => 32.06,
        "Cl" => 35.45,
        "Ar" => 39.948,
        "K" => 39.098,
        "Ca" => 40.078,
        "Sc" => 44.956,
        "Ti" => 47.867,
        "V" => 50.942,
        "Cr" => 51.996,
        "Mn" => 54.938,
        "Fe" => 55.845,
        "Co" => 58.933,
        "Ni" => 58.693,
        "Cu" => 63.546,
        "Zn" => 65.38,
        "Ga" => 69.723,
        "Ge" => 72.630,
        "As" => 74.922,
        "Se" => 78.971,
        "Br" => 79.904,
        "Kr" => 83.798,
        "Rb" => 85.468,
        "Sr" => 87.62,
        "Y" => 88.906,
        "Zr" => 91.224,
        "Nb" => 92.906,
        "Mo" => 95.95,
        "Tc" => 97.0,
        "Ru" => 101.07,
        "Rh" => 102.906,
        "Pd" => 106.42,
        "Ag" => 107.868,
        "Cd" => 112.414,
        "In" => 114.818,
        "Sn" => 118.710,
        "Sb" => 121.760,
        "Te" => 127.60,
        "I" => 126.904,
        "Xe" => 131.293,
        "Cs" => 132.905,
        "Ba" => 137.327,
        "La" => 138.905,
        "Ce" => 140.116,
        "Pr" => 140.908,
        "Nd" => 144.242,
        "Pm" => 145.0,
        "Sm" => 150.36,
        "Eu" => 151.964,
        "Gd" => 157.25,
        "Tb" => 158.925,
        "Dy" => 162.500,
        "Ho" => 164.930,
        "Er" => 167.259,
        "Tm" => 168.934,
        "Yb" => 173.045,
        "Lu" => 174.967,
        "Hf" => 178.486,
        "Ta" => 180.948,
        "W" => 183.84,
        "Re" => 186.207,
        "Os" => 190.23,
        "Ir" => 192.217,
        "Pt" => 195.084,
        "Au" => 196.967,
        "Hg" => 200.592,
        "Tl" => 204.38,
        "Pb" => 207.2,
        "Bi" => 208.980,
        "Po" => 209.0,
        "At" => 210.0,
        "Rn" => 222.0,
        "Fr" => 223.0,
        "Ra" => 226.0,
        "Ac" => 227.0,
        "Th" => 232.038,
        "Pa" => 231.036,
        "U" => 238.029,
        _ => 0.0,
    }
}

fn degrees(mol: &Molecule) -> Vec<usize> {
    let mut deg = vec![0usize; mol.atoms.len()];
    for bond in &mol.bonds {
        deg[bond.a] += 1;
        deg[bond.b] += 1;
    }
    deg
}

/// Acyclic single bonds between two atoms that both carry further heavy
/// neighbors, i.e. excluding bonds to terminal atoms.
fn rotatable_bonds(mol: &Molecule) -> u32 {
    let deg = degrees(mol);
    mol.bonds
        .iter()
        .enumerate()
        .filter(|(bi, bond)| {
            bond.order == BondOrder::Single
                && !mol.bond_in_ring[*bi]
                && deg[bond.a] >= 2
                && deg[bond.b] >= 2
        })
        .count() as u32
}

fn is_acceptor(mol: &Molecule, i: usize) -> bool {
    let atom = &mol.atoms[i];
    (atom.element == "N" || atom.element == "O") && atom.charge <= 0
}

fn is_donor(mol: &Molecule, i: usize) -> bool {
    let atom = &mol.atoms[i];
    (atom.element == "N" || atom.element == "O") && atom.h_count >= 1
}

/// Lone-pair slots available for accepting a hydrogen bond: two on oxygen,
/// one on nitrogen, plus one per unit of negative charge. This convention
/// is ours; it is deterministic, not a claim of matching external tooling.
fn acceptor_sites(mol: &Molecule, i: usize) -> u32 {
    if !is_acceptor(mol, i) {
        return 0;
    }
    let atom = &mol.atoms[i];
    let base = if atom.element == "O" { 2 } else { 1 };
    base + (-i32::from(atom.charge)).max(0) as u32
}

/// Graph-count descriptors over one molecule: 12 atom counts, 7 bond
/// counts, 6 polarity counts, and 17 topology counts. Aromatic bonds are
/// classed with single bonds; ring sizes come from `sssr`.
pub fn compute_mqn(mol: &Molecule) -> DescriptorVector {
    let mut v = vec![0f64; MQN_LEN];
    for (i, atom) in mol.atoms.iter().enumerate() {
        let cyclic = mol.atom_in_ring[i];
        match atom.element.as_str() {
            "C" => v[0] += 1.0,
            "F" => v[1] += 1.0,
            "Cl" => v[2] += 1.0,
            "Br" => v[3] += 1.0,
            "I" => v[4] += 1.0,
            "S" => v[5] += 1.0,
            "P" => v[6] += 1.0,
            "N" => v[if cyclic { 8 } else { 7 }] += 1.0,
            "O" => v[if cyclic { 10 } else { 9 }] += 1.0,
            _ => {}
        }
        if atom.element != "H" {
            v[11] += 1.0;
        }
    }

    for (bi, bond) in mol.bonds.iter().enumerate() {
        let class = match bond.order {
            BondOrder::Single | BondOrder::Aromatic => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
        };
        let base = if mol.bond_in_ring[bi] { 15 } else { 12 };
        v[base + class] += 1.0;
    }
    v[18] = f64::from(rotatable_bonds(mol));

    for i in 0..mol.atoms.len() {
        v[19] += f64::from(acceptor_sites(mol, i));
        if is_acceptor(mol, i) {
            v[20] += 1.0;
        }
        if is_donor(mol, i) {
            v[21] += f64::from(mol.atoms[i].h_count);
            v[22] += 1.0;
        }
        let charge = i32::from(mol.atoms[i].charge);
        if charge < 0 {
            v[23] += f64::from(-charge);
        } else {
            v[24] += f64::from(charge);
        }
    }

    let deg = degrees(mol);
    for (i, &d) in deg.iter().enumerate() {
        if mol.atom_in_ring[i] {
            if (2..=4).contains(&d) {
                v[27 + d] += 1.0;
            }
        } else if (1..=4).contains(&d) {
            v[24 + d] += 1.0;
        }
    }

    let rings = sssr(mol);
    let mut atom_ring_count = vec![0u32; mol.atoms.len()];
    let mut bond_ring_count = vec![0u32; mol.bonds.len()];
    for ring in &rings {
        let bucket = ring.len().clamp(3, 10);
        v[29 + bucket] += 1.0;
        let mut members: Vec<usize> = Vec::new();
        for &bi in ring {
            bond_ring_count[bi] += 1;
            members.push(mol.bonds[bi].a);
            members.push(mol.bonds[bi].b);
        }
        members.sort_unstable();
        members.dedup();
        for a in members {
            atom_ring_count[a] += 1;
        }
    }
    v[40] = atom_ring_count.iter().filter(|&&c| c >= 2).count() as f64;
    v[41] = bond_ring_count.iter().filter(|&&c| c >= 2).count() as f64;

    DescriptorVector::new(v, MQN_SCHEMA).expect("counts are finite")
}

/// Drug-likeness properties. TPSA and logP have no native model here; they
/// are passed through from external data when available.
pub fn admet_properties(mol: &Molecule, external: Option<(f64, f64)>) -> AdmetProperties {
    let molecular_weight = mol
        .atoms
        .iter()
        .map(|a| atomic_weight(&a.element) + f64::from(a.h_count) * atomic_weight("H"))
        .sum();
    let hba = (0..mol.atoms.len()).filter(|&i| is_acceptor(mol, i)).count() as u32;
    let hbd = (0..mol.atoms.len()).filter(|&i| is_donor(mol, i)).count() as u32;
    let rings = (mol.bonds.len() + 1 - mol.atoms.len()) as u32;
    let heteroatoms = mol
        .atoms
        .iter()
        .filter(|a| a.element != "C" && a.element != "H")
        .count() as u32;
    let formal_charge = mol.atoms.iter().map(|a| i32::from(a.charge)).sum();
    AdmetProperties {
        molecular_weight,
        hba,
        hbd,
        rotatable_bonds: rotatable_bonds(mol),
        rings,
        heteroatoms,
        formal_charge,
        tpsa: external.map(|(t, _)| t),
        log_p: external.map(|(_, l)| l),
    }
}
