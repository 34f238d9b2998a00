//! Reading and writing the per-iteration artifact files. Everything is
//! plain text (SMILES lines, CSV, JSON) so a run directory can be
//! inspected with ordinary tools.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::scoring::ScoreRecord;

use super::PipelineError;

pub fn write_smiles_lines(path: &Path, lines: &[String]) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Non-empty, non-comment lines of a SMILES file; only the first
/// whitespace-separated field of each line is kept.
pub fn read_smiles_lines(path: &Path) -> Result<Vec<String>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let field = trimmed.split_whitespace().next().unwrap_or("");
        out.push(field.to_string());
    }
    Ok(out)
}

/// Score table as `smiles,cluster,score`; the cluster field is empty for
/// records scored without clustering.
pub fn write_score_records(path: &Path, records: &[ScoreRecord]) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "smiles,cluster,score")?;
    for r in records {
        match r.cluster {
            Some(c) => writeln!(w, "{},{},{}", r.smiles, c, r.score)?,
            None => writeln!(w, "{},,{}", r.smiles, r.score)?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_score_records(path: &Path) -> Result<Vec<ScoreRecord>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| PipelineError::Stage {
            stage: "report",
            message: e.to_string(),
        })?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| PipelineError::Stage {
            stage: "report",
            message: e.to_string(),
        })?;
        let bad = |what: &str| PipelineError::Stage {
            stage: "report",
            message: format!("{}: bad {what} in row {:?}", path.display(), row),
        };
        let smiles = row.get(0).ok_or_else(|| bad("smiles"))?.to_string();
        let cluster = match row.get(1) {
            Some("") | None => None,
            Some(c) => Some(c.parse::<usize>().map_err(|_| bad("cluster"))?),
        };
        let score: f64 = row
            .get(2)
            .ok_or_else(|| bad("score"))?
            .parse()
            .map_err(|_| bad("score"))?;
        out.push(ScoreRecord {
            smiles,
            cluster,
            fingerprint: None,
            score,
        });
    }
    Ok(out)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub(crate) fn ensure_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path)?;
    Ok(())
}
