//! Scalar scores from protein-ligand interaction fingerprints, plus the
//! synthetic oracle used for closed-loop runs without a docking backend.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::proxy::ProxyPoint;
use crate::smiles::{canonical_string, parse_smiles};

pub const INTERACTION_TYPES: [&str; 9] = [
    "hydrophobic",
    "hbond",
    "ionic",
    "cation_pi",
    "vdw",
    "halogen_bond",
    "pi_face",
    "pi_edge",
    "metallic",
];

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("unrecognized fingerprint column '{0}'")]
    UnknownColumn(String),
    #[error("fingerprint file has no '{0}' column")]
    MissingColumn(&'static str),
    #[error("weight for '{0}' must be a finite non-negative number")]
    InvalidWeight(&'static str),
    #[error("score/affinity pairs have degenerate variance")]
    DegenerateVariance,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Counts of attractive contact types for one protein-ligand complex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InteractionFingerprint {
    pub hydrophobic: u32,
    pub hbond: u32,
    pub ionic: u32,
    pub cation_pi: u32,
    pub vdw: u32,
    pub halogen_bond: u32,
    pub pi_face: u32,
    pub pi_edge: u32,
    pub metallic: u32,
}

impl InteractionFingerprint {
    pub fn counts(&self) -> [u32; 9] {
        [
            self.hydrophobic,
            self.hbond,
            self.ionic,
            self.cation_pi,
            self.vdw,
            self.halogen_bond,
            self.pi_face,
            self.pi_edge,
            self.metallic,
        ]
    }

    fn add_count(&mut self, type_index: usize, count: u32) {
        let slot = match type_index {
            0 => &mut self.hydrophobic,
            1 => &mut self.hbond,
            2 => &mut self.ionic,
            3 => &mut self.cation_pi,
            4 => &mut self.vdw,
            5 => &mut self.halogen_bond,
            6 => &mut self.pi_face,
            7 => &mut self.pi_edge,
            8 => &mut self.metallic,
            _ => unreachable!(),
        };
        *slot += count;
    }
}

/// Per-type score weights. All nine types are always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightTable {
    pub hydrophobic: f64,
    pub hbond: f64,
    pub ionic: f64,
    pub cation_pi: f64,
    pub vdw: f64,
    pub halogen_bond: f64,
    pub pi_face: f64,
    pub pi_edge: f64,
    pub metallic: f64,
}

impl Default for WeightTable {
    fn default() -> Self {
        WeightTable {
            hydrophobic: 2.5,
            hbond: 3.5,
            ionic: 7.5,
            cation_pi: 2.5,
            vdw: 1.0,
            halogen_bond: 3.0,
            pi_face: 3.0,
            pi_edge: 1.0,
            metallic: 3.0,
        }
    }
}

impl WeightTable {
    pub fn weights(&self) -> [f64; 9] {
        [
            self.hydrophobic,
            self.hbond,
            self.ionic,
            self.cation_pi,
            self.vdw,
            self.halogen_bond,
            self.pi_face,
            self.pi_edge,
            self.metallic,
        ]
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        for (name, w) in INTERACTION_TYPES.iter().zip(self.weights()) {
            if !w.is_finite() || w < 0.0 {
                return Err(ScoringError::InvalidWeight(name));
            }
        }
        Ok(())
    }
}

pub fn score(fp: &InteractionFingerprint, w: &WeightTable) -> f64 {
    fp.counts()
        .iter()
        .zip(w.weights())
        .map(|(&c, w)| c as f64 * w)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub smiles: String,
    /// Cluster of origin; absent until the pipeline attaches one.
    pub cluster: Option<usize>,
    pub fingerprint: Option<InteractionFingerprint>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreThreshold {
    pub value: f64,
    pub note: String,
}

impl ScoreThreshold {
    pub fn new(value: f64, note: impl Into<String>) -> Self {
        assert!(value.is_finite());
        ScoreThreshold {
            value,
            note: note.into(),
        }
    }

    /// Kinase preset: the weakest score among the approved c-Abl inhibitors.
    pub fn c_abl() -> Self {
        ScoreThreshold::new(37.0, "lowest score among approved c-Abl inhibitors")
    }

    /// Nuclease preset: no known binders, so the cutoff comes from the
    /// score distribution over the PDBbind refined set.
    pub fn hnh() -> Self {
        ScoreThreshold::new(11.0, "PDBbind refined-set score distribution cutoff")
    }
}

/// Maps a fingerprint CSV header to an interaction type, accepting both the
/// native snake_case names and the contact-table spellings produced by
/// interaction-profiling tools (HBDonor, XBDonor, MetalAcceptor, ...).
fn column_type(name: &str) -> Option<usize> {
    let squashed: String = name
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    let idx = match squashed.as_str() {
        "hydrophobic" => 0,
        "hbond" | "hydrogenbond" | "hbdonor" | "hbacceptor" => 1,
        "ionic" | "cationic" | "anionic" => 2,
        "cationpi" | "pication" => 3,
        "vdw" | "vanderwaals" | "vdwcontact" => 4,
        "halogenbond" | "xbdonor" | "xbacceptor" => 5,
        "piface" | "facetoface" | "pistacking" => 6,
        "piedge" | "edgetoface" => 7,
        "metallic" | "metalacceptor" | "metaldonor" => 8,
        _ => return None,
    };
    Some(idx)
}

#[derive(Debug, Default)]
pub struct FingerprintIngest {
    pub records: Vec<ScoreRecord>,
    /// Skipped rows as (row label, reason).
    pub rejects: Vec<(String, String)>,
    /// Canonical keys that appeared more than once (max score kept).
    pub collisions: Vec<String>,
}

/// Read a per-molecule fingerprint CSV and score every row with `weights`.
/// Duplicate canonical keys keep the higher score. Bad rows are skipped and
/// logged; an unrecognized column fails the whole file.
pub fn ingest_fingerprints<R: Read>(
    reader: R,
    weights: &WeightTable,
) -> Result<FingerprintIngest, ScoringError> {
    weights
        .validate()
        .map_err(|_| ScoringError::InvalidWeight("table"))?;
    let mut csv_reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv_reader.headers()?.clone();
    let mut smiles_col = None;
    let mut type_cols: Vec<(usize, usize)> = Vec::new();
    for (i, name) in header.iter().enumerate() {
        if name.eq_ignore_ascii_case("smiles") {
            smiles_col = Some(i);
        } else if let Some(t) = column_type(name) {
            type_cols.push((i, t));
        } else {
            return Err(ScoringError::UnknownColumn(name.to_string()));
        }
    }
    let smiles_col = smiles_col.ok_or(ScoringError::MissingColumn("smiles"))?;
    if type_cols.is_empty() {
        return Err(ScoringError::MissingColumn("interaction"));
    }

    let mut best: BTreeMap<String, ScoreRecord> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut rejects = Vec::new();
    let mut collisions = Vec::new();
    'rows: for (row_idx, row) in csv_reader.records().enumerate() {
        let row = row?;
        let raw = row.get(smiles_col).unwrap_or("").to_string();
        let key = match parse_smiles(&raw) {
            Ok(mol) => canonical_string(&mol),
            Err(e) => {
                rejects.push((raw, format!("unparseable smiles: {e}")));
                continue;
            }
        };
        let mut fp = InteractionFingerprint::default();
        for &(col, t) in &type_cols {
            let field = row.get(col).unwrap_or("");
            let value: f64 = match field.parse() {
                Ok(v) => v,
                Err(_) => {
                    rejects.push((raw, format!("unreadable count '{field}'")));
                    continue 'rows;
                }
            };
            if !value.is_finite() || value < 0.0 || value.fract() != 0.0 {
                rejects.push((raw, format!("invalid count {field} in row {}", row_idx + 2)));
                continue 'rows;
            }
            fp.add_count(t, value as u32);
        }
        let record = ScoreRecord {
            score: score(&fp, weights),
            smiles: key.clone(),
            cluster: None,
            fingerprint: Some(fp),
        };
        match best.get_mut(&key) {
            None => {
                best.insert(key.clone(), record);
                order.push(key);
            }
            Some(existing) => {
                collisions.push(key);
                if record.score > existing.score {
                    *existing = record;
                }
            }
        }
    }

    let records = order.into_iter().map(|k| best.remove(&k).unwrap()).collect();
    Ok(FingerprintIngest {
        records,
        rejects,
        collisions,
    })
}

/// Stand-in for docking: a smooth, deterministic score surface over the
/// proxy space with a single Gaussian peak and an optional linear trend,
/// clamped to be non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub target: Vec<f64>,
    pub base: f64,
    pub amplitude: f64,
    pub sigma: f64,
    #[serde(default)]
    pub trend: Vec<f64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            target: vec![0.0, 0.0],
            base: 5.0,
            amplitude: 45.0,
            sigma: 3.0,
            trend: Vec::new(),
        }
    }
}

pub fn synthetic_oracle(p: &ProxyPoint, cfg: &OracleConfig) -> f64 {
    let dims = p.coordinates.len().max(cfg.target.len());
    let mut d2 = 0.0;
    for i in 0..dims {
        let x = p.coordinates.get(i).copied().unwrap_or(0.0);
        let t = cfg.target.get(i).copied().unwrap_or(0.0);
        d2 += (x - t) * (x - t);
    }
    let trend: f64 = cfg
        .trend
        .iter()
        .zip(&p.coordinates)
        .map(|(a, x)| a * x)
        .sum();
    let raw = cfg.base + cfg.amplitude * (-d2 / (2.0 * cfg.sigma * cfg.sigma)).exp() + trend;
    raw.max(0.0)
}

/// Pearson correlation between scores and affinity labels, plus the
/// fraction of scores at or above the threshold.
pub fn evaluate_scores(pairs: &[(f64, f64)], threshold: f64) -> Result<(f64, f64), ScoringError> {
    if pairs.len() < 2 {
        return Err(ScoringError::DegenerateVariance);
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for &(x, y) in pairs {
        cov += (x - mean_x) * (y - mean_y);
        var_x += (x - mean_x) * (x - mean_x);
        var_y += (y - mean_y) * (y - mean_y);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(ScoringError::DegenerateVariance);
    }
    let r = cov / (var_x.sqrt() * var_y.sqrt());
    let fraction = pairs.iter().filter(|p| p.0 >= threshold).count() as f64 / n;
    Ok((r, fraction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fp(rng: &mut impl Rng) -> InteractionFingerprint {
        InteractionFingerprint {
            hydrophobic: rng.gen_range(0..20),
            hbond: rng.gen_range(0..10),
            ionic: rng.gen_range(0..4),
            cation_pi: rng.gen_range(0..3),
            vdw: rng.gen_range(0..30),
            halogen_bond: rng.gen_range(0..3),
            pi_face: rng.gen_range(0..3),
            pi_edge: rng.gen_range(0..3),
            metallic: rng.gen_range(0..2),
        }
    }

    #[test]
    fn zero_fingerprint_scores_zero() {
        let fp = InteractionFingerprint::default();
        assert_eq!(score(&fp, &WeightTable::default()), 0.0);
    }

    #[test]
    fn worked_examples() {
        let fp = InteractionFingerprint {
            hydrophobic: 4,
            hbond: 2,
            vdw: 10,
            ..Default::default()
        };
        assert_eq!(score(&fp, &WeightTable::default()), 27.0);

        let ionic_only = InteractionFingerprint {
            ionic: 5,
            ..Default::default()
        };
        let s = score(&ionic_only, &WeightTable::default());
        assert_eq!(s, 37.5);
        assert!(s > ScoreThreshold::c_abl().value);
    }

    #[test]
    fn matches_hand_computation() {
        // Weights restated literally so a drift in the default table would
        // show up here.
        let w = [2.5, 3.5, 7.5, 2.5, 1.0, 3.0, 3.0, 1.0, 3.0];
        let table = WeightTable::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let fp = random_fp(&mut rng);
            let by_hand: f64 = fp
                .counts()
                .iter()
                .zip(&w)
                .map(|(&c, w)| c as f64 * w)
                .sum();
            assert!((score(&fp, &table) - by_hand).abs() < 1e-12);
        }
    }

    #[test]
    fn score_is_linear() {
        let table = WeightTable::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_fp(&mut rng);
            let b = random_fp(&mut rng);
            let mut sum = InteractionFingerprint::default();
            for (i, (ca, cb)) in a.counts().iter().zip(b.counts()).enumerate() {
                sum.add_count(i, ca + cb);
            }
            let lhs = score(&sum, &table);
            let rhs = score(&a, &table) + score(&b, &table);
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn threshold_covariance_under_weight_scaling() {
        let table = WeightTable::default();
        let c = 2.5;
        let scaled = WeightTable {
            hydrophobic: table.hydrophobic * c,
            hbond: table.hbond * c,
            ionic: table.ionic * c,
            cation_pi: table.cation_pi * c,
            vdw: table.vdw * c,
            halogen_bond: table.halogen_bond * c,
            pi_face: table.pi_face * c,
            pi_edge: table.pi_edge * c,
            metallic: table.metallic * c,
        };
        let t = 20.0;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let fp = random_fp(&mut rng);
            let passes = score(&fp, &table) >= t;
            let passes_scaled = score(&fp, &scaled) >= c * t;
            assert_eq!(passes, passes_scaled);
        }
    }

    #[test]
    fn ingest_basic() {
        let csv = "\
smiles,hydrophobic,hbond,ionic,cation_pi,vdw,halogen_bond,pi_face,pi_edge,metallic
CCO,4,2,0,0,10,0,0,0,0
c1ccccc1,1,0,0,0,5,0,0,0,0
CC(=O)O,0,3,1,0,2,0,0,0,0
";
        let out = ingest_fingerprints(csv.as_bytes(), &WeightTable::default()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.rejects.is_empty());
        assert_eq!(out.records[0].score, 27.0);
        assert_eq!(out.records[0].smiles, "CCO");
        assert!(out.records.iter().all(|r| r.cluster.is_none()));
    }

    #[test]
    fn ingest_rejects_bad_rows() {
        let csv = "\
smiles,hydrophobic,hbond,ionic,cation_pi,vdw,halogen_bond,pi_face,pi_edge,metallic
CCO,4,2,0,0,10,0,0,0,0
C(C,1,0,0,0,0,0,0,0,0
CCC,-1,0,0,0,0,0,0,0,0
CCCC,x,0,0,0,0,0,0,0,0
";
        let out = ingest_fingerprints(csv.as_bytes(), &WeightTable::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejects.len(), 3);
    }

    #[test]
    fn ingest_keeps_max_on_duplicates() {
        // OCC canonicalizes to the same key as CCO.
        let csv = "\
smiles,hydrophobic,hbond,ionic,cation_pi,vdw,halogen_bond,pi_face,pi_edge,metallic
CCO,4,0,0,0,0,0,0,0,0
OCC,1,0,0,0,20,0,0,0,0
";
        let out = ingest_fingerprints(csv.as_bytes(), &WeightTable::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.collisions, vec!["CCO".to_string()]);
        assert_eq!(out.records[0].score, 22.5);
    }

    #[test]
    fn ingest_contact_table_aliases() {
        let csv = "\
smiles,CationPi,EdgeToFace,FaceToFace,Hydrogen-bond,Hydrophobic,Ionic,MetalAcceptor,PiCation,Van der Waals,XBDonor
CCO,1,2,3,4,5,6,7,8,9,10
";
        let out = ingest_fingerprints(csv.as_bytes(), &WeightTable::default()).unwrap();
        let fp = out.records[0].fingerprint.unwrap();
        // CationPi and PiCation both land on the same type.
        assert_eq!(fp.cation_pi, 9);
        assert_eq!(fp.pi_edge, 2);
        assert_eq!(fp.pi_face, 3);
        assert_eq!(fp.hbond, 4);
        assert_eq!(fp.hydrophobic, 5);
        assert_eq!(fp.ionic, 6);
        assert_eq!(fp.metallic, 7);
        assert_eq!(fp.vdw, 9);
        assert_eq!(fp.halogen_bond, 10);
    }

    #[test]
    fn ingest_unknown_column_fails() {
        let csv = "smiles,hydrophobic,mystery\nCCO,1,2\n";
        assert!(matches!(
            ingest_fingerprints(csv.as_bytes(), &WeightTable::default()),
            Err(ScoringError::UnknownColumn(c)) if c == "mystery"
        ));
    }

    #[test]
    fn oracle_peak_and_symmetry() {
        let cfg = OracleConfig {
            target: vec![1.0, -2.0],
            base: 5.0,
            amplitude: 45.0,
            sigma: 3.0,
            trend: Vec::new(),
        };
        let at_peak = synthetic_oracle(
            &ProxyPoint {
                coordinates: vec![1.0, -2.0],
            },
            &cfg,
        );
        assert!((at_peak - 50.0).abs() < 1e-12);

        let left = synthetic_oracle(
            &ProxyPoint {
                coordinates: vec![0.0, -2.0],
            },
            &cfg,
        );
        let right = synthetic_oracle(
            &ProxyPoint {
                coordinates: vec![2.0, -2.0],
            },
            &cfg,
        );
        assert_eq!(left.to_bits(), right.to_bits());
    }

    #[test]
    fn oracle_tail_clamps_to_zero() {
        let cfg = OracleConfig {
            target: vec![0.0],
            base: -1.0,
            amplitude: 10.0,
            sigma: 1.0,
            trend: Vec::new(),
        };
        let far = synthetic_oracle(
            &ProxyPoint {
                coordinates: vec![1e6],
            },
            &cfg,
        );
        assert_eq!(far, 0.0);
    }

    #[test]
    fn oracle_is_deterministic() {
        let cfg = OracleConfig::default();
        let p = ProxyPoint {
            coordinates: vec![0.3, 1.7],
        };
        let a = synthetic_oracle(&p, &cfg);
        let b = synthetic_oracle(&p, &cfg);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn pearson_endpoints() {
        let up: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        let (r, _) = evaluate_scores(&up, 0.0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);

        let down: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, -3.0 * i as f64)).collect();
        let (r, _) = evaluate_scores(&down, 0.0).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pairs: Vec<(f64, f64)> = (0..100)
            .map(|_| (rng.gen_range(0.0..50.0), rng.gen_range(2.0..12.0)))
            .collect();
        let (r, fraction) = evaluate_scores(&pairs, 25.0).unwrap();

        // Direct covariance/stddev computation, written out separately.
        let n = pairs.len() as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let syy: f64 = pairs.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
        let oracle = sxy / (sxx * syy).sqrt();
        assert!((r - oracle).abs() < 1e-12);

        let count = pairs.iter().filter(|p| p.0 >= 25.0).count();
        assert!((fraction - count as f64 / n).abs() < 1e-12);
    }

    #[test]
    fn degenerate_variance_rejected() {
        let flat = vec![(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)];
        assert!(matches!(
            evaluate_scores(&flat, 0.0),
            Err(ScoringError::DegenerateVariance)
        ));
        assert!(matches!(
            evaluate_scores(&[(1.0, 2.0)], 0.0),
            Err(ScoringError::DegenerateVariance)
        ));
    }

    #[test]
    fn weight_table_round_trips_and_validates() {
        let json = serde_json::to_string(&WeightTable::default()).unwrap();
        let back: WeightTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, WeightTable::default());
        back.validate().unwrap();

        let bad = WeightTable {
            ionic: -1.0,
            ..WeightTable::default()
        };
        assert!(bad.validate().is_err());
    }
}
