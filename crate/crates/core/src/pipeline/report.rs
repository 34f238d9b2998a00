//! Run-directory reporting: per-iteration score table, score and
//! cluster-size histograms, generation metrics against the pretraining
//! corpus, and an optional reference-similarity table, all CSV files
//! under `<run>/report/`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::clustering::Clustering;
use crate::metrics::{
    circular_fingerprint, generation_metrics, memorization_report, similarity_report, Fingerprint,
};
use crate::smiles::{canonical_string, parse_smiles, Molecule};

use super::artifacts::{ensure_dir, read_json, read_score_records, read_smiles_lines};
use super::{iter_dir, summarize_scores, PipelineError, RunConfig};

const HISTOGRAM_BINS: usize = 20;
const FINGERPRINT_RADIUS: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub score_histogram: PathBuf,
    pub cluster_sizes: PathBuf,
    pub generation: PathBuf,
    pub similarity: Option<PathBuf>,
    /// Iterations covered (complete prefix with scores present).
    pub iterations: usize,
}

/// Summarize a run directory into CSV tables. Covers every iteration of
/// the complete prefix; a trailing crashed iteration is ignored rather
/// than fatal. `references` adds a per-iteration Tanimoto table against
/// the given molecules.
pub fn report(
    run_dir: &Path,
    references: Option<&[String]>,
) -> Result<ReportFiles, PipelineError> {
    let config: RunConfig = read_json(&run_dir.join("config.json"))?;

    let mut iterations: Vec<(usize, Vec<f64>)> = Vec::new();
    loop {
        let idx = iterations.len();
        let scores_path = iter_dir(run_dir, idx).join("scores.csv");
        if !scores_path.exists() {
            if idx == 0 {
                return Err(PipelineError::MissingArtifact(scores_path));
            }
            break;
        }
        let records = read_score_records(&scores_path)?;
        iterations.push((idx, records.iter().map(|r| r.score).collect()));
    }

    let out_dir = run_dir.join("report");
    ensure_dir(&out_dir)?;
    let table = write_table(&out_dir, &iterations, config.threshold)?;
    let score_histogram = write_score_histogram(&out_dir, &iterations)?;
    let cluster_sizes = write_cluster_sizes(run_dir, &out_dir, iterations.len())?;
    let generation = write_generation_metrics(run_dir, &out_dir, iterations.len())?;
    let similarity = match references {
        Some(refs) => Some(write_similarity(run_dir, &out_dir, iterations.len(), refs)?),
        None => None,
    };
    Ok(ReportFiles {
        table,
        score_histogram,
        cluster_sizes,
        generation,
        similarity,
        iterations: iterations.len(),
    })
}

fn create(out_dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), PipelineError> {
    let path = out_dir.join(name);
    let w = BufWriter::new(File::create(&path)?);
    Ok((path, w))
}

fn write_table(
    out_dir: &Path,
    iterations: &[(usize, Vec<f64>)],
    threshold: f64,
) -> Result<PathBuf, PipelineError> {
    let (path, mut w) = create(out_dir, "table.csv")?;
    writeln!(w, "iteration,percent_above,q1,q2,mean,q3,max,std")?;
    for (idx, scores) in iterations {
        let s = summarize_scores(scores, threshold).ok_or_else(|| {
            PipelineError::stage("report", format!("iteration {idx} has an empty score table"))
        })?;
        writeln!(
            w,
            "{idx},{},{},{},{},{},{},{}",
            s.percent_above, s.q1, s.q2, s.mean, s.q3, s.max, s.std
        )?;
    }
    w.flush()?;
    Ok(path)
}

fn write_score_histogram(
    out_dir: &Path,
    iterations: &[(usize, Vec<f64>)],
) -> Result<PathBuf, PipelineError> {
    let (path, mut w) = create(out_dir, "score_histogram.csv")?;
    writeln!(w, "iteration,bin_start,bin_end,count")?;
    let all: Vec<f64> = iterations.iter().flat_map(|(_, s)| s.iter().copied()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() {
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        for (idx, scores) in iterations {
            if width == 0.0 {
                writeln!(w, "{idx},{lo},{hi},{}", scores.len())?;
                continue;
            }
            let mut counts = [0usize; HISTOGRAM_BINS];
            for &s in scores {
                let bin = (((s - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
                counts[bin] += 1;
            }
            for (b, count) in counts.iter().enumerate() {
                let start = lo + b as f64 * width;
                let end = lo + (b + 1) as f64 * width;
                writeln!(w, "{idx},{start},{end},{count}")?;
            }
        }
    }
    w.flush()?;
    Ok(path)
}

fn write_cluster_sizes(
    run_dir: &Path,
    out_dir: &Path,
    iterations: usize,
) -> Result<PathBuf, PipelineError> {
    let (path, mut w) = create(out_dir, "cluster_sizes.csv")?;
    writeln!(w, "iteration,size,frequency")?;
    for idx in 0..iterations {
        let clustering_path = iter_dir(run_dir, idx).join("clustering.bin");
        if !clustering_path.exists() {
            continue;
        }
        let clustering: Clustering = read_json(&clustering_path)?;
        let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
        for size in clustering.cluster_sizes() {
            *freq.entry(size).or_default() += 1;
        }
        for (size, count) in freq {
            writeln!(w, "{idx},{size},{count}")?;
        }
    }
    w.flush()?;
    Ok(path)
}

fn write_generation_metrics(
    run_dir: &Path,
    out_dir: &Path,
    iterations: usize,
) -> Result<PathBuf, PipelineError> {
    let corpus: HashSet<String> = read_smiles_lines(&run_dir.join("corpus.smi"))?
        .into_iter()
        .collect();
    let (path, mut w) = create(out_dir, "generation_metrics.csv")?;
    writeln!(
        w,
        "iteration,total,valid,unique,novel,validity,uniqueness,novelty,\
         pct_in_prev_training,pct_in_prev_scored,pct_prev_training_covered,pct_prev_scored_covered"
    )?;
    let mut prev: Option<(Vec<String>, Vec<String>)> = None;
    for idx in 0..iterations {
        let dir = iter_dir(run_dir, idx);
        let generated = read_smiles_lines(&dir.join("generated.smi"))?;
        let m = generation_metrics(&generated, &corpus);
        let mem = prev
            .as_ref()
            .map(|(training, scored)| memorization_report(&generated, training, scored));
        let (a, b, c, d) = mem.map_or((0.0, 0.0, 0.0, 0.0), |r| {
            (
                r.generated_in_training_pct,
                r.generated_in_scored_pct,
                r.training_covered_pct,
                r.scored_covered_pct,
            )
        });
        writeln!(
            w,
            "{idx},{},{},{},{},{},{},{},{a},{b},{c},{d}",
            m.total, m.valid, m.unique, m.novel, m.validity, m.uniqueness, m.novelty
        )?;
        let training = read_smiles_lines(&dir.join("alset.smi"))?;
        let scored: Vec<String> = read_score_records(&dir.join("scores.csv"))?
            .into_iter()
            .map(|r| r.smiles)
            .collect();
        prev = Some((training, scored));
    }
    w.flush()?;
    Ok(path)
}

fn fingerprint_set(molecules: &[String]) -> Vec<(String, Fingerprint)> {
    molecules
        .iter()
        .filter_map(|s| {
            parse_smiles(s)
                .ok()
                .map(|mol| (s.clone(), circular_fingerprint(&mol, FINGERPRINT_RADIUS)))
        })
        .collect()
}

fn write_similarity(
    run_dir: &Path,
    out_dir: &Path,
    iterations: usize,
    references: &[String],
) -> Result<PathBuf, PipelineError> {
    let refs: Vec<(String, Fingerprint)> = references
        .iter()
        .map(|s| {
            let mol: Molecule = parse_smiles(s).map_err(|e| {
                PipelineError::stage("report", format!("reference {s:?}: {e}"))
            })?;
            Ok((
                canonical_string(&mol),
                circular_fingerprint(&mol, FINGERPRINT_RADIUS),
            ))
        })
        .collect::<Result<_, PipelineError>>()?;
    if refs.is_empty() {
        return Err(PipelineError::stage("report", "the reference set is empty"));
    }
    let (path, mut w) = create(out_dir, "similarity.csv")?;
    writeln!(w, "iteration,reference,mean,max,argmax")?;
    for idx in 0..iterations {
        let generated = read_smiles_lines(&iter_dir(run_dir, idx).join("generated.smi"))?;
        let fps = fingerprint_set(&generated);
        if fps.is_empty() {
            continue;
        }
        let rows = similarity_report(&refs, &fps)
            .map_err(|e| PipelineError::stage("report", e))?;
        for row in rows {
            writeln!(w, "{idx},{},{},{},{}", row.reference, row.mean, row.max, row.argmax)?;
        }
    }
    w.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::super::run::run_loop;
    use super::super::testkit::{corpus, mini_config};
    use super::super::LoopMode;
    use super::*;

    fn lines(path: &Path) -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(str::to_string)
            .collect()
    }

    #[test]
    fn report_covers_every_iteration_with_exact_pass_percentages() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_config(LoopMode::Complete, 21);
        run_loop(dir.path(), &cfg, &corpus()).unwrap();
        let files = report(dir.path(), None).unwrap();
        assert_eq!(files.iterations, 3);
        assert!(files.similarity.is_none());

        let table = lines(&files.table);
        assert_eq!(table[0], "iteration,percent_above,q1,q2,mean,q3,max,std");
        assert_eq!(table.len(), 4);
        for (idx, row) in table[1..].iter().enumerate() {
            let cells: Vec<&str> = row.split(',').collect();
            assert_eq!(cells[0], idx.to_string());
            let reported: f64 = cells[1].parse().unwrap();
            let records =
                read_score_records(&dir.path().join(idx.to_string()).join("scores.csv")).unwrap();
            let brute = 100.0
                * records.iter().filter(|r| r.score >= cfg.threshold).count() as f64
                / records.len() as f64;
            assert_eq!(reported, brute);
        }

        let hist = lines(&files.score_histogram);
        assert_eq!(hist[0], "iteration,bin_start,bin_end,count");
        assert_eq!(hist.len(), 1 + 3 * HISTOGRAM_BINS);
        let total: usize = hist[1..]
            .iter()
            .map(|row| row.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 3 * 20);

        let sizes = lines(&files.cluster_sizes);
        assert_eq!(sizes[0], "iteration,size,frequency");
        for idx in 0..3usize {
            let rows: Vec<(usize, usize)> = sizes[1..]
                .iter()
                .filter(|row| row.starts_with(&format!("{idx},")))
                .map(|row| {
                    let cells: Vec<&str> = row.split(',').collect();
                    (cells[1].parse().unwrap(), cells[2].parse().unwrap())
                })
                .collect();
            let clusters: usize = rows.iter().map(|&(_, freq)| freq).sum();
            let points: usize = rows.iter().map(|&(size, freq)| size * freq).sum();
            assert_eq!(clusters, cfg.k, "iteration {idx} cluster count");
            let generated =
                read_smiles_lines(&dir.path().join(idx.to_string()).join("generated.smi")).unwrap();
            assert_eq!(points, generated.len(), "iteration {idx} population");
        }

        let gen = lines(&files.generation);
        assert_eq!(gen.len(), 4);
        for row in &gen[1..] {
            let cells: Vec<&str> = row.split(',').collect();
            assert_eq!(cells.len(), 12);
            let validity: f64 = cells[5].parse().unwrap();
            assert!((0.0..=1.0).contains(&validity));
        }
    }

    #[test]
    fn similarity_table_appears_when_references_are_given() {
        let dir = tempfile::tempdir().unwrap();
        run_loop(dir.path(), &mini_config(LoopMode::Complete, 33), &corpus()).unwrap();
        let refs = vec!["CCOCCCNC".to_string(), "OCCCCNCC".to_string()];
        let files = report(dir.path(), Some(&refs)).unwrap();
        let sim = lines(&files.similarity.unwrap());
        assert_eq!(sim[0], "iteration,reference,mean,max,argmax");
        assert_eq!(sim.len(), 1 + 3 * refs.len());
        for row in &sim[1..] {
            let cells: Vec<&str> = row.split(',').collect();
            let mean: f64 = cells[2].parse().unwrap();
            let max: f64 = cells[3].parse().unwrap();
            assert!((0.0..=1.0).contains(&mean));
            assert!(mean <= max && max <= 1.0);
        }
        let err = report(dir.path(), Some(&["C((".to_string()])).unwrap_err();
        assert!(matches!(err, PipelineError::Stage { stage: "report", .. }));
    }

    #[test]
    fn partial_runs_report_their_complete_prefix() {
        let dir = tempfile::tempdir().unwrap();
        run_loop(dir.path(), &mini_config(LoopMode::Complete, 2), &corpus()).unwrap();
        std::fs::remove_file(dir.path().join("2/scores.csv")).unwrap();
        let files = report(dir.path(), None).unwrap();
        assert_eq!(files.iterations, 2);
        assert_eq!(lines(&files.table).len(), 3);
    }

    #[test]
    fn reporting_an_empty_directory_names_the_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            report(dir.path(), None),
            Err(PipelineError::MissingArtifact(_))
        ));
        std::fs::write(
            dir.path().join("config.json"),
            serde_json::to_string(&RunConfig::desk()).unwrap(),
        )
        .unwrap();
        let err = report(dir.path(), None).unwrap_err();
        match err {
            PipelineError::MissingArtifact(p) => {
                assert!(p.ends_with("0/scores.csv"), "unexpected path {}", p.display())
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
