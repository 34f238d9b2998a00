//! The iteration driver. Pretraining is iteration 0's model; each
//! iteration then generates, embeds, clusters, scores, assembles and
//! fine-tunes, persisting every artifact before the next begins. Stage
//! rng streams are derived from (run seed, iteration, stage), so a run
//! resumed off a complete prefix recomputes the tail bit-identically.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{kmeans_restarts, sample_for_scoring, select_clustering, Clustering};
use crate::descriptors::{compute_mqn, DescriptorVector};
use crate::filters::{default_motifs, MotifPattern};
use crate::generator::{
    fit_markov, generate_unique, train, Checkpoint, GenerationOutcome, GenerationRequest,
    GeneratorModel, GptModel, ModelConfig, TrainSchedule,
};
use crate::proxy::{fit_pca, project, PcaModel, ProxyPoint};
use crate::sampling::{assemble_al_set, ALTrainingSet, SamplingMethod};
use crate::scoring::{synthetic_oracle, ScoreRecord};
use crate::smiles::{
    build_vocabulary, canonical_string, frame, parse_smiles, tokenize, FramedSequence, Vocabulary,
};

use super::artifacts::{ensure_dir, read_json, write_json, write_score_records, write_smiles_lines};
use super::{
    iter_dir, stage_seed, summarize_scores, GeneratorChoice, IterationState, IterationStats,
    LoopMode, ModelScale, PipelineError, RunConfig, ScoreSource, STAGE_ALSET, STAGE_CLUSTER,
    STAGE_FINETUNE, STAGE_GENERATE, STAGE_PRETRAIN, STAGE_SAMPLE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub stats: Vec<IterationStats>,
    /// Iterations loaded from a previous run instead of recomputed.
    pub resumed: usize,
}

/// Run (or resume) the full loop under `run_dir`: pretraining plus
/// `config.iterations` active-learning rounds, one artifact directory per
/// iteration, indices 0 through `iterations` inclusive.
pub fn run_loop(
    run_dir: &Path,
    config: &RunConfig,
    corpus: &[String],
) -> Result<LoopOutcome, PipelineError> {
    config.validate()?;
    ensure_dir(run_dir)?;
    write_json(&run_dir.join("config.json"), config)?;

    let bundle = prepare_corpus(corpus, config.vocab_min_count)?;
    write_smiles_lines(&run_dir.join("corpus.smi"), &bundle.canonical)?;
    write_json(&run_dir.join("vocab.json"), &bundle.vocab)?;

    let mut runner = Runner {
        run_dir,
        config,
        hash: config.hash(),
        vocab: bundle.vocab,
        block: bundle.block,
        corpus_frames: bundle.frames,
        pca: load_optional_pca(run_dir)?,
        model: None,
        stats: Vec::new(),
        resumed: 0,
    };
    for iteration in 0..=config.iterations {
        runner.iteration(iteration)?;
    }
    Ok(LoopOutcome {
        stats: runner.stats,
        resumed: runner.resumed,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let reader = BufReader::new(File::open(path)?);
    Checkpoint::from_reader(reader).map_err(|e| PipelineError::stage("resume", e))
}

/// Parse, canonicalize and deduplicate a training corpus, keeping first
/// occurrences in order and dropping unparseable lines.
pub fn canonical_corpus(corpus: &[String]) -> Result<Vec<String>, PipelineError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for line in corpus {
        if let Ok(mol) = parse_smiles(line) {
            let canon = canonical_string(&mol);
            if seen.insert(canon.clone()) {
                out.push(canon);
            }
        }
    }
    if out.is_empty() {
        return Err(PipelineError::Config(
            "the training corpus has no parseable molecules".to_string(),
        ));
    }
    Ok(out)
}

/// A training corpus made model-ready: canonical deduplicated strings,
/// the vocabulary built over them, and every tokenizable molecule framed
/// at the corpus-wide block size.
pub struct CorpusBundle {
    pub canonical: Vec<String>,
    pub vocab: Vocabulary,
    pub frames: Vec<FramedSequence>,
    pub block: usize,
}

pub fn prepare_corpus(corpus: &[String], min_count: usize) -> Result<CorpusBundle, PipelineError> {
    let canonical = canonical_corpus(corpus)?;
    let (vocab, _) = build_vocabulary(canonical.iter().map(String::as_str), min_count)
        .map_err(|e| PipelineError::Config(format!("vocabulary: {e}")))?;
    let mut token_runs = Vec::with_capacity(canonical.len());
    let mut block = 0;
    for s in &canonical {
        if let Ok(ids) = tokenize(s, &vocab) {
            block = block.max(ids.len());
            token_runs.push(ids);
        }
    }
    if token_runs.is_empty() || block == 0 {
        return Err(PipelineError::Config(
            "no corpus molecule survives tokenization under the pruned vocabulary".to_string(),
        ));
    }
    let frames = token_runs
        .iter()
        .map(|ids| frame(ids, block, &vocab))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::Config(format!("framing: {e}")))?;
    Ok(CorpusBundle {
        canonical,
        vocab,
        frames,
        block,
    })
}

/// Fit or train a fresh generator on a prepared corpus. `loss_csv` gets
/// the per-step training trace for the transformer backend.
pub fn pretrain_generator(
    config: &RunConfig,
    vocab: &Vocabulary,
    block: usize,
    frames: &[FramedSequence],
    seed: u64,
    loss_csv: Option<&Path>,
) -> Result<GeneratorModel, PipelineError> {
    match config.generator {
        GeneratorChoice::Markov { order } => Ok(GeneratorModel::Markov(
            fit_markov(frames, order, vocab).map_err(|e| PipelineError::stage("pretrain", e))?,
        )),
        GeneratorChoice::Gpt { scale } => {
            let cfg = match scale {
                ModelScale::Desk => ModelConfig::desk(vocab.len(), block),
                ModelScale::Paper => ModelConfig::paper(vocab.len(), block),
            };
            let mut gpt =
                GptModel::new(cfg, seed).map_err(|e| PipelineError::stage("pretrain", e))?;
            let schedule = TrainSchedule::pretrain(config.batch_size, config.pretrain_epochs);
            let report = train(&mut gpt, frames, &schedule, &config.optimizer, vocab, seed)
                .map_err(|e| PipelineError::stage("pretrain", e))?;
            if let Some(path) = loss_csv {
                let mut w = BufWriter::new(File::create(path)?);
                report.write_csv(&mut w)?;
                w.flush()?;
            }
            Ok(GeneratorModel::Gpt(gpt))
        }
    }
}

/// How far a Markov fine-tune moves each refreshed transition row toward
/// the fine-tuning set's statistics when the set is diverse.
const MARKOV_BLEND: f64 = 0.9;

/// Distinct-molecule count at which a fine-tuning set earns half the full
/// blend weight. Replica-heavy sets built from a handful of passers carry
/// little new evidence, so their updates are shrunk toward the prior model.
const BLEND_HALF_SUPPORT: f64 = 100.0;

/// Update a generator on a fine-tuning set: the Markov backend blends its
/// rows toward a fresh fit of the set, the transformer gets low-lr
/// gradient training. Returns the final training loss (transformer only)
/// and how many molecules were skipped as untokenizable or over-long. An
/// empty usable set leaves the model unchanged.
pub fn finetune_generator(
    model: &mut GeneratorModel,
    molecules: &[String],
    vocab: &Vocabulary,
    block: usize,
    config: &RunConfig,
    seed: u64,
    loss_csv: Option<&Path>,
) -> Result<(Option<f64>, usize), PipelineError> {
    let (frames, skipped) = build_frames(molecules, vocab, block);
    if frames.is_empty() {
        return Ok((None, skipped));
    }
    let loss = match model {
        GeneratorModel::Markov(m) => {
            let update = fit_markov(&frames, m.order(), vocab)
                .map_err(|e| PipelineError::stage("finetune", e))?;
            let base: f64 = std::env::var("MOLGEN_BLEND")
                .ok()
                .and_then(|s| s.parse().ok())
                .unwrap_or(MARKOV_BLEND);
            let distinct = molecules.iter().collect::<HashSet<_>>().len() as f64;
            let blend = base * distinct / (distinct + BLEND_HALF_SUPPORT);
            m.absorb(&update, blend)
                .map_err(|e| PipelineError::stage("finetune", e))?;
            None
        }
        GeneratorModel::Gpt(gpt) => {
            let mut schedule = TrainSchedule::fine_tune(config.batch_size);
            schedule.epochs = config.finetune_epochs;
            let report = train(gpt, &frames, &schedule, &config.optimizer, vocab, seed)
                .map_err(|e| PipelineError::stage("finetune", e))?;
            if let Some(path) = loss_csv {
                let mut w = BufWriter::new(File::create(path)?);
                report.write_csv(&mut w)?;
                w.flush()?;
            }
            report.final_loss()
        }
    };
    Ok((loss, skipped))
}

fn load_optional_pca(run_dir: &Path) -> Result<Option<PcaModel>, PipelineError> {
    let path = run_dir.join("pca.json");
    if path.exists() {
        Ok(Some(read_json(&path)?))
    } else {
        Ok(None)
    }
}

fn build_frames(
    molecules: &[String],
    vocab: &Vocabulary,
    block: usize,
) -> (Vec<FramedSequence>, usize) {
    let mut frames = Vec::with_capacity(molecules.len());
    let mut skipped = 0;
    for m in molecules {
        match tokenize(m, vocab) {
            Ok(ids) if ids.len() <= block => match frame(&ids, block, vocab) {
                Ok(f) => frames.push(f),
                Err(_) => skipped += 1,
            },
            _ => skipped += 1,
        }
    }
    (frames, skipped)
}

struct Runner<'a> {
    run_dir: &'a Path,
    config: &'a RunConfig,
    hash: u64,
    vocab: Vocabulary,
    block: usize,
    corpus_frames: Vec<FramedSequence>,
    pca: Option<PcaModel>,
    model: Option<GeneratorModel>,
    stats: Vec<IterationStats>,
    resumed: usize,
}

impl Runner<'_> {
    fn iteration(&mut self, iteration: usize) -> Result<(), PipelineError> {
        let dir = iter_dir(self.run_dir, iteration);
        let state_path = dir.join("state.json");
        if state_path.exists() {
            let state: IterationState = read_json(&state_path)?;
            if state.config_hash != self.hash {
                return Err(PipelineError::Config(format!(
                    "iteration {iteration} was produced under a different configuration \
                     (stored hash {:016x}, current {:016x})",
                    state.config_hash, self.hash
                )));
            }
            self.stats.push(read_json(&dir.join("stats.json"))?);
            self.resumed += 1;
            return Ok(());
        }
        ensure_dir(&dir)?;

        if self.model.is_none() {
            if iteration == 0 {
                self.pretrain(&dir)?;
            } else {
                let ckpt = load_checkpoint(&dir.join("checkpoint"))?;
                ckpt.verify_vocab(&self.vocab)
                    .map_err(|e| PipelineError::stage("resume", e))?;
                self.model = Some(ckpt.model);
            }
        }

        let outcome = self.generate(iteration)?;
        let generated = outcome.unique.clone();
        write_smiles_lines(&dir.join("generated.smi"), &generated)?;

        let (records, clustering) = match self.config.mode {
            LoopMode::Naive => (self.score_random_sample(iteration, &generated)?, None),
            _ => {
                let (records, clustering) = self.score_clustered(iteration, &generated)?;
                write_json(&dir.join("clustering.bin"), &clustering)?;
                (records, Some(clustering))
            }
        };
        write_score_records(&dir.join("scores.csv"), &records)?;

        let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
        let summary = summarize_scores(&scores, self.config.threshold).ok_or_else(|| {
            PipelineError::stage("score", "the scoring sample came out empty")
        })?;

        let al = self.assemble(iteration, &records, clustering.as_ref(), &generated)?;
        write_smiles_lines(&dir.join("alset.smi"), &al.molecules)?;

        let mut finetune_skipped = 0;
        let mut final_train_loss = None;
        if iteration < self.config.iterations {
            let (loss, skipped) = self.finetune(iteration, &dir, &al.molecules)?;
            final_train_loss = loss;
            finetune_skipped = skipped;
            let next = iter_dir(self.run_dir, iteration + 1);
            ensure_dir(&next)?;
            self.write_checkpoint(&next.join("checkpoint"))?;
        }

        let stats = IterationStats {
            iteration,
            generation: outcome.stats,
            reached_target: outcome.reached_target,
            unique_generated: generated.len(),
            scored: records.len(),
            summary,
            passers: al.passer_count,
            replica_multiplier: al.replica_multiplier,
            al_set_size: al.molecules.len(),
            sampled_part: al.molecules.len() - al.passer_count * al.replica_multiplier,
            fell_back_to_uniform: al.fell_back_to_uniform,
            finetune_skipped,
            final_train_loss,
        };
        write_json(&dir.join("stats.json"), &stats)?;
        let state = IterationState {
            iteration,
            checkpoint: format!("{iteration}/checkpoint"),
            generated: format!("{iteration}/generated.smi"),
            clustering: clustering
                .is_some()
                .then(|| format!("{iteration}/clustering.bin")),
            scores: format!("{iteration}/scores.csv"),
            al_set: format!("{iteration}/alset.smi"),
            config_hash: self.hash,
            seed: self.config.seed,
        };
        write_json(&state_path, &state)?;
        self.stats.push(stats);
        Ok(())
    }

    fn pretrain(&mut self, dir0: &Path) -> Result<(), PipelineError> {
        let seed = stage_seed(self.config.seed, 0, STAGE_PRETRAIN);
        let loss_csv = matches!(self.config.generator, GeneratorChoice::Gpt { .. })
            .then(|| dir0.join("pretrain_loss.csv"));
        let model = pretrain_generator(
            self.config,
            &self.vocab,
            self.block,
            &self.corpus_frames,
            seed,
            loss_csv.as_deref(),
        )?;
        self.model = Some(model);
        self.write_checkpoint(&dir0.join("checkpoint"))
    }

    fn generate(&self, iteration: usize) -> Result<GenerationOutcome, PipelineError> {
        let model = self.model.as_ref().expect("generator initialized");
        let mut request = GenerationRequest::new(self.config.molecules_per_iteration);
        request.max_attempts = self.config.max_attempts;
        request.temperature = self.config.temperature;
        request.apply_admet = self.config.apply_admet;
        request.apply_motifs = self.config.apply_motifs;
        let motifs: &[MotifPattern] = if self.config.apply_motifs {
            default_motifs()
        } else {
            &[]
        };
        let mut rng =
            ChaCha8Rng::seed_from_u64(stage_seed(self.config.seed, iteration, STAGE_GENERATE));
        generate_unique(
            model,
            &self.vocab,
            &request,
            &self.config.admet,
            motifs,
            &mut rng,
        )
        .map_err(|e| PipelineError::stage("generate", e))
    }

    fn descriptor_rows(&self, molecules: &[String]) -> Result<Vec<DescriptorVector>, PipelineError> {
        molecules
            .iter()
            .map(|s| {
                parse_smiles(s)
                    .map(|mol| compute_mqn(&mol))
                    .map_err(|e| PipelineError::stage("descriptors", format!("{s}: {e}")))
            })
            .collect()
    }

    /// Fit the proxy basis on iteration 0's generated set and persist it;
    /// later iterations project onto the stored basis so the score surface
    /// stays fixed for the whole run.
    fn fit_pca_once(&mut self, rows: &[DescriptorVector]) -> Result<(), PipelineError> {
        if self.pca.is_none() {
            let model = fit_pca(rows, self.config.pca_components, self.config.pca_scaling)
                .map_err(|e| PipelineError::stage("project", e))?;
            write_json(&self.run_dir.join("pca.json"), &model)?;
            self.pca = Some(model);
        }
        Ok(())
    }

    fn project_rows(&self, rows: &[DescriptorVector]) -> Result<Vec<Vec<f64>>, PipelineError> {
        let pca = self
            .pca
            .as_ref()
            .ok_or_else(|| PipelineError::MissingArtifact(self.run_dir.join("pca.json")))?;
        rows.iter()
            .map(|r| {
                project(pca, r)
                    .map(|p| p.coordinates)
                    .map_err(|e| PipelineError::stage("project", e))
            })
            .collect()
    }

    fn score_one(
        &self,
        smiles: &str,
        coordinates: Vec<f64>,
        cluster: Option<usize>,
    ) -> Result<ScoreRecord, PipelineError> {
        let score = match &self.config.score_source {
            ScoreSource::Oracle { config } => synthetic_oracle(&ProxyPoint { coordinates }, config),
            ScoreSource::Ingest { .. } => {
                return Err(PipelineError::stage(
                    "score",
                    "fingerprint ingest cannot run inside the loop; dock the generated set \
                     and use the score subcommand instead",
                ))
            }
        };
        Ok(ScoreRecord {
            smiles: smiles.to_string(),
            cluster,
            fingerprint: None,
            score,
        })
    }

    fn score_clustered(
        &mut self,
        iteration: usize,
        generated: &[String],
    ) -> Result<(Vec<ScoreRecord>, Clustering), PipelineError> {
        let rows = self.descriptor_rows(generated)?;
        if iteration == 0 {
            self.fit_pca_once(&rows)?;
        }
        let points = self.project_rows(&rows)?;
        let candidates = kmeans_restarts(
            &points,
            self.config.k,
            self.config.restarts,
            stage_seed(self.config.seed, iteration, STAGE_CLUSTER),
        )
        .map_err(|e| PipelineError::stage("cluster", e))?;
        let clustering = select_clustering(&candidates).clone();

        let mut rng =
            ChaCha8Rng::seed_from_u64(stage_seed(self.config.seed, iteration, STAGE_SAMPLE));
        let sample = sample_for_scoring(
            &clustering,
            self.config.scoring_per_cluster,
            self.config.scoring_total,
            &mut rng,
        );
        let records = sample
            .members
            .iter()
            .map(|&(idx, cluster)| {
                self.score_one(&generated[idx], points[idx].clone(), Some(cluster))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((records, clustering))
    }

    /// The no-clustering control: a uniform random scoring sample straight
    /// from the generated set.
    fn score_random_sample(
        &mut self,
        iteration: usize,
        generated: &[String],
    ) -> Result<Vec<ScoreRecord>, PipelineError> {
        if iteration == 0 && self.pca.is_none() {
            let rows = self.descriptor_rows(generated)?;
            self.fit_pca_once(&rows)?;
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(stage_seed(self.config.seed, iteration, STAGE_SAMPLE));
        let take = self.config.scoring_total.min(generated.len());
        let mut picked: Vec<usize> =
            rand::seq::index::sample(&mut rng, generated.len(), take).into_vec();
        picked.sort_unstable();
        let chosen: Vec<String> = picked.iter().map(|&i| generated[i].clone()).collect();
        let rows = self.descriptor_rows(&chosen)?;
        let points = self.project_rows(&rows)?;
        chosen
            .iter()
            .zip(points)
            .map(|(smiles, coords)| self.score_one(smiles, coords, None))
            .collect()
    }

    fn assemble(
        &self,
        iteration: usize,
        records: &[ScoreRecord],
        clustering: Option<&Clustering>,
        generated: &[String],
    ) -> Result<ALTrainingSet, PipelineError> {
        let method = match self.config.mode {
            LoopMode::Complete => Some(self.config.method),
            LoopMode::Uniform => Some(SamplingMethod::Uniform),
            LoopMode::Naive => None,
        };
        let unclustered = Clustering {
            k: 0,
            centroids: Vec::new(),
            assignments: Vec::new(),
            inertia: 0.0,
            size_variance: 0.0,
        };
        let mut rng =
            ChaCha8Rng::seed_from_u64(stage_seed(self.config.seed, iteration, STAGE_ALSET));
        assemble_al_set(
            records,
            self.config.threshold,
            clustering.unwrap_or(&unclustered),
            generated,
            method,
            self.config.replica_floor,
            self.config.sample_target,
            &mut rng,
        )
        .map_err(|e| PipelineError::stage("al_set", e))
    }

    fn finetune(
        &mut self,
        iteration: usize,
        dir: &Path,
        molecules: &[String],
    ) -> Result<(Option<f64>, usize), PipelineError> {
        let seed = stage_seed(self.config.seed, iteration, STAGE_FINETUNE);
        let loss_csv = matches!(self.config.generator, GeneratorChoice::Gpt { .. })
            .then(|| dir.join("finetune_loss.csv"));
        let model = self.model.as_mut().expect("generator initialized");
        finetune_generator(
            model,
            molecules,
            &self.vocab,
            self.block,
            self.config,
            seed,
            loss_csv.as_deref(),
        )
    }

    fn write_checkpoint(&self, path: &Path) -> Result<(), PipelineError> {
        let model = self.model.as_ref().expect("generator initialized");
        let ckpt = Checkpoint::new(model.clone(), &self.vocab);
        let mut w = BufWriter::new(File::create(path)?);
        ckpt.to_writer(&mut w)
            .map_err(|e| PipelineError::stage("checkpoint", e))?;
        w.flush()?;
        Ok(())
    }
}
