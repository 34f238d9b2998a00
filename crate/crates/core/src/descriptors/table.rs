//! Ingestion of externally computed descriptor tables.

use std::collections::BTreeMap;
use std::io::Read;

use super::{DescriptorError, DescriptorVector};
use crate::smiles::{canonical_string, parse_smiles};

/// Descriptor vectors keyed by canonical SMILES, with the column schema
/// taken from the file header. Rows that cannot be used (bad SMILES,
/// non-finite or unparseable values) are logged, not fatal.
#[derive(Debug, Clone)]
pub struct DescriptorTable {
    schema: Vec<String>,
    rows: BTreeMap<String, DescriptorVector>,
    rejects: Vec<(String, String)>,
}

impl DescriptorTable {
    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn schema_id(&self) -> String {
        format!("table{}", self.schema.len())
    }

    pub fn get(&self, canonical_smiles: &str) -> Option<&DescriptorVector> {
        self.rows.get(canonical_smiles)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DescriptorVector)> {
        self.rows.iter()
    }

    /// Rejected rows as (smiles, reason) pairs, in file order.
    pub fn rejects(&self) -> &[(String, String)] {
        &self.rejects
    }
}

/// Read a CSV with header "smiles,<name1>,...,<nameN>" into a table keyed
/// by canonical SMILES. Rows whose values are not all finite numbers are
/// rejected and logged. Two rows mapping to the same canonical key must
/// carry identical values.
pub fn ingest_descriptor_table<R: Read>(reader: R) -> Result<DescriptorTable, DescriptorError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    if headers.get(0) != Some("smiles") || headers.len() < 2 {
        return Err(DescriptorError::BadHeader);
    }
    let schema: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    let schema_id = format!("table{}", schema.len());

    let mut rows: BTreeMap<String, DescriptorVector> = BTreeMap::new();
    let mut rejects: Vec<(String, String)> = Vec::new();
    for (row_number, record) in csv_reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(DescriptorError::SchemaMismatch(row_number + 2));
        }
        let smiles = record.get(0).unwrap_or_default().to_string();
        let mol = match parse_smiles(&smiles) {
            Ok(mol) => mol,
            Err(e) => {
                rejects.push((smiles, format!("unparseable smiles: {e}")));
                continue;
            }
        };
        let key = canonical_string(&mol);

        let mut values = Vec::with_capacity(schema.len());
        let mut bad: Option<String> = None;
        for field in record.iter().skip(1) {
            match field.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => values.push(x),
                Ok(_) => {
                    bad = Some(format!("non-finite value {field:?}"));
                    break;
                }
                Err(_) => {
                    bad = Some(format!("unparseable value {field:?}"));
                    break;
                }
            }
        }
        if let Some(reason) = bad {
            rejects.push((smiles, reason));
            continue;
        }
        let vector = DescriptorVector::new(values, schema_id.clone())
            .expect("finiteness checked per field");
        match rows.get(&key) {
            Some(existing) if existing != &vector => {
                return Err(DescriptorError::DuplicateKey(key));
            }
            _ => {
                rows.insert(key, vector);
            }
        }
    }

    Ok(DescriptorTable {
        schema,
        rows,
        rejects,
    })
}
