//! Closed-loop orchestration: generate, embed, cluster, score, assemble,
//! fine-tune, once per iteration, with every stage artifact persisted under
//! `run/<iter>/` so a run can be audited or resumed.

mod artifacts;
mod report;
mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::AdmetBounds;
use crate::generator::{Optimizer, DEFAULT_MARKOV_ORDER};
use crate::metrics::fnv1a;
use crate::proxy::Scaling;
use crate::rng::derive_seed;
use crate::sampling::SamplingMethod;
use crate::scoring::OracleConfig;

pub use artifacts::{read_score_records, read_smiles_lines, write_score_records, write_smiles_lines};
pub use report::{report, ReportFiles};
pub use run::{
    canonical_corpus, finetune_generator, load_checkpoint, prepare_corpus, pretrain_generator,
    run_loop, CorpusBundle, LoopOutcome,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub(crate) fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: err.to_string(),
        }
    }
}

/// Loop variant: `Complete` is the full protocol, `Uniform` keeps the
/// clustering but samples clusters evenly, `Naive` drops clustering and
/// fine-tunes on replicas alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    #[default]
    Complete,
    Uniform,
    Naive,
}

impl std::str::FromStr for LoopMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "complete" => Ok(LoopMode::Complete),
            "uniform" => Ok(LoopMode::Uniform),
            "naive" => Ok(LoopMode::Naive),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Transformer width preset: `Desk` trains in seconds on a CPU, `Paper`
/// is the full-size configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelScale {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorChoice {
    Markov {
        #[serde(default = "d_order")]
        order: usize,
    },
    Gpt {
        #[serde(default)]
        scale: ModelScale,
    },
}

impl Default for GeneratorChoice {
    fn default() -> Self {
        GeneratorChoice::Markov {
            order: DEFAULT_MARKOV_ORDER,
        }
    }
}

/// Where scores come from. The loop needs a closed-form source; fingerprint
/// CSV ingest is for one-shot scoring of externally docked sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreSource {
    Oracle {
        #[serde(default)]
        config: OracleConfig,
    },
    Ingest {
        path: PathBuf,
    },
}

impl Default for ScoreSource {
    fn default() -> Self {
        ScoreSource::Oracle {
            config: OracleConfig::default(),
        }
    }
}

/// Full run recipe. Every field has a default, and the defaults are the
/// desk preset: 2,000 molecules per iteration, k=25, 100 scored, replica
/// floor 500 plus 500 sampled, Markov generator, 5 iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: LoopMode,
    pub generator: GeneratorChoice,
    pub molecules_per_iteration: usize,
    /// 0 means 50x the unique-molecule target.
    pub max_attempts: usize,
    pub temperature: f64,
    pub apply_admet: bool,
    pub apply_motifs: bool,
    pub admet: AdmetBounds,
    pub vocab_min_count: usize,
    pub pca_components: usize,
    pub pca_scaling: Scaling,
    pub k: usize,
    pub restarts: usize,
    pub scoring_per_cluster: usize,
    pub scoring_total: usize,
    pub score_source: ScoreSource,
    pub threshold: f64,
    pub method: SamplingMethod,
    pub replica_floor: usize,
    pub sample_target: usize,
    pub iterations: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub optimizer: Optimizer,
}

fn d_order() -> usize {
    DEFAULT_MARKOV_ORDER
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: LoopMode::Complete,
            generator: GeneratorChoice::default(),
            molecules_per_iteration: 2000,
            max_attempts: 0,
            temperature: 1.0,
            apply_admet: true,
            apply_motifs: true,
            admet: AdmetBounds::default(),
            vocab_min_count: 1,
            pca_components: 2,
            pca_scaling: Scaling::Standardize,
            k: 25,
            restarts: 10,
            scoring_per_cluster: 4,
            scoring_total: 100,
            score_source: ScoreSource::default(),
            threshold: 37.0,
            method: SamplingMethod::Softsub,
            replica_floor: 500,
            sample_target: 500,
            iterations: 5,
            seed: 0,
            batch_size: 64,
            pretrain_epochs: 20,
            finetune_epochs: 10,
            optimizer: Optimizer::default(),
        }
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        RunConfig::default()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        fn fail(msg: &str) -> Result<(), PipelineError> {
            Err(PipelineError::Config(msg.to_string()))
        }
        if self.molecules_per_iteration == 0 {
            return fail("molecules_per_iteration must be positive");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return fail("temperature must be finite and non-negative");
        }
        if self.pca_components == 0 {
            return fail("pca_components must be positive");
        }
        if self.k == 0 || self.restarts == 0 {
            return fail("k and restarts must be positive");
        }
        if self.scoring_total == 0 {
            return fail("scoring_total must be positive");
        }
        if !self.threshold.is_finite() {
            return fail("threshold must be finite");
        }
        if let SamplingMethod::Softdiv { divf } = self.method {
            if !(divf.is_finite() && divf > 0.0) {
                return fail("divf must be finite and positive");
            }
        }
        if self.iterations == 0 {
            return fail("iterations must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if let GeneratorChoice::Markov { order } = self.generator {
            if order == 0 {
                return fail("markov order must be positive");
            }
        }
        if let ScoreSource::Oracle { config } = &self.score_source {
            if !(config.sigma.is_finite() && config.sigma > 0.0) {
                return fail("oracle sigma must be finite and positive");
            }
        }
        self.admet
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    /// Stable digest of the serialized config, stamped into every
    /// iteration state so resumed runs cannot silently mix recipes.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a(json.as_bytes())
    }
}

/// Completion record for one iteration; written last, so its presence
/// marks the iteration as done. Paths are relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub iteration: usize,
    pub checkpoint: String,
    pub generated: String,
    pub clustering: Option<String>,
    pub scores: String,
    pub al_set: String,
    pub config_hash: u64,
    pub seed: u64,
}

/// Per-iteration numbers dropped into `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub generation: crate::generator::GenerationStats,
    pub reached_target: bool,
    pub unique_generated: usize,
    pub scored: usize,
    pub summary: ScoreSummary,
    pub passers: usize,
    pub replica_multiplier: usize,
    pub al_set_size: usize,
    pub sampled_part: usize,
    pub fell_back_to_uniform: bool,
    /// Fine-tune molecules dropped because canonicalization made them
    /// untokenizable or longer than the model block.
    pub finetune_skipped: usize,
    pub final_train_loss: Option<f64>,
}

/// Score distribution summary in the report-table column order:
/// percent above threshold, Q1, Q2, mean, Q3, max, std.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub percent_above: f64,
    pub q1: f64,
    pub q2: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    pub std: f64,
}

/// Linear-interpolation quantile on a sorted slice (the R-7 rule:
/// h = (n-1)p, value = x[floor h] + frac(h) * (x[floor h + 1] - x[floor h])).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Summarize a score set against a threshold; `None` when empty.
/// Std is the sample standard deviation (0 for a single score).
pub fn summarize_scores(scores: &[f64], threshold: f64) -> Option<ScoreSummary> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = scores.iter().sum::<f64>() / n;
    let std = if scores.len() > 1 {
        let ss: f64 = scores.iter().map(|s| (s - mean) * (s - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let above = scores.iter().filter(|&&s| s >= threshold).count();
    Some(ScoreSummary {
        percent_above: 100.0 * above as f64 / n,
        q1: quantile_sorted(&sorted, 0.25),
        q2: quantile_sorted(&sorted, 0.5),
        mean,
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        std,
    })
}

// Per-stage rng streams, derived from (run seed, iteration, stage) so a
// resumed run draws exactly what the uninterrupted run would have drawn.
pub(crate) const STAGE_PRETRAIN: u64 = 0;
pub(crate) const STAGE_GENERATE: u64 = 1;
pub(crate) const STAGE_CLUSTER: u64 = 2;
pub(crate) const STAGE_SAMPLE: u64 = 3;
pub(crate) const STAGE_ALSET: u64 = 4;
pub(crate) const STAGE_FINETUNE: u64 = 5;

pub(crate) fn stage_seed(seed: u64, iteration: usize, stage: u64) -> u64 {
    derive_seed(seed, ((iteration as u64) << 3) | stage)
}

pub(crate) fn iter_dir(run_dir: &Path, iteration: usize) -> PathBuf {
    run_dir.join(iteration.to_string())
}
