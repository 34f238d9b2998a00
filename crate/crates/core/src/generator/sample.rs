//! One sampling interface over both generator backends, and the
//! uniqueness-accumulation loop with ADMET and functional-group gates.

use std::collections::HashSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::markov::MarkovModel;
use super::model::{softmax_in_place, GptModel};
use super::{GeneratorError, GeneratorModel};
use crate::descriptors::admet_properties;
use crate::filters::{admet_filter, functional_group_filter, AdmetBounds, MotifPattern};
use crate::smiles::{canonical_string, detokenize, parse_smiles, Vocabulary};

pub trait SequenceSampler {
    /// Full sequence budget including the start and end markers.
    fn max_len(&self) -> usize;

    /// Draw the next token id after `prefix` (which begins at the start
    /// marker). Temperature 0 means greedy argmax, lowest id on ties.
    fn next_id(
        &self,
        prefix: &[u32],
        temperature: f64,
        rng: &mut dyn RngCore,
    ) -> Result<u32, GeneratorError>;
}

fn argmax(values: &[f64]) -> u32 {
    let mut best = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_value {
            best_value = v;
            best = i;
        }
    }
    best as u32
}

fn draw(probs: &[f64], rng: &mut dyn RngCore) -> u32 {
    let r: f64 = rand::Rng::gen(rng);
    let mut acc = 0.0;
    let mut last = 0u32;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = i as u32;
        acc += p;
        if r < acc {
            return i as u32;
        }
    }
    last
}

impl SequenceSampler for GptModel {
    fn max_len(&self) -> usize {
        self.config().max_seq_len()
    }

    fn next_id(
        &self,
        prefix: &[u32],
        temperature: f64,
        rng: &mut dyn RngCore,
    ) -> Result<u32, GeneratorError> {
        let mut logits = self.last_logits(prefix)?;
        if temperature <= 0.0 {
            return Ok(argmax(&logits));
        }
        for v in &mut logits {
            *v /= temperature;
        }
        softmax_in_place(&mut logits);
        Ok(draw(&logits, rng))
    }
}

impl SequenceSampler for MarkovModel {
    fn max_len(&self) -> usize {
        self.block_size() + 2
    }

    fn next_id(
        &self,
        prefix: &[u32],
        temperature: f64,
        rng: &mut dyn RngCore,
    ) -> Result<u32, GeneratorError> {
        let mut probs = self.next_distribution(prefix);
        if temperature <= 0.0 {
            return Ok(argmax(&probs));
        }
        if (temperature - 1.0).abs() > 1e-12 {
            for p in &mut probs {
                if *p > 0.0 {
                    *p = p.powf(1.0 / temperature);
                }
            }
            let sum: f64 = probs.iter().sum();
            for p in &mut probs {
                *p /= sum;
            }
        }
        Ok(draw(&probs, rng))
    }
}

impl SequenceSampler for GeneratorModel {
    fn max_len(&self) -> usize {
        match self {
            GeneratorModel::Gpt(m) => m.max_len(),
            GeneratorModel::Markov(m) => m.max_len(),
        }
    }

    fn next_id(
        &self,
        prefix: &[u32],
        temperature: f64,
        rng: &mut dyn RngCore,
    ) -> Result<u32, GeneratorError> {
        match self {
            GeneratorModel::Gpt(m) => m.next_id(prefix, temperature, rng),
            GeneratorModel::Markov(m) => m.next_id(prefix, temperature, rng),
        }
    }
}

/// Autoregressive draw of one body (start marker stripped), halting at the
/// end marker or the sequence budget.
pub fn sample_sequence(
    sampler: &dyn SequenceSampler,
    vocab: &Vocabulary,
    temperature: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<u32>, GeneratorError> {
    let mut seq = vec![vocab.start_id()];
    while seq.len() < sampler.max_len() {
        let id = sampler.next_id(&seq, temperature, rng)?;
        if id == vocab.end_id() {
            break;
        }
        seq.push(id);
    }
    Ok(seq.split_off(1))
}

fn default_temperature() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub target_unique: usize,
    /// 0 means the default budget of 50 attempts per requested unique.
    #[serde(default)]
    pub max_attempts: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_true")]
    pub apply_admet: bool,
    #[serde(default = "default_true")]
    pub apply_motifs: bool,
}

impl GenerationRequest {
    pub fn new(target_unique: usize) -> Self {
        GenerationRequest {
            target_unique,
            max_attempts: 0,
            temperature: 1.0,
            apply_admet: true,
            apply_motifs: true,
        }
    }

    pub fn effective_max_attempts(&self) -> usize {
        if self.max_attempts == 0 {
            self.target_unique.saturating_mul(50)
        } else {
            self.max_attempts
        }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.target_unique == 0 {
            return Err(GeneratorError::InvalidConfig("target unique count must be >= 1"));
        }
        if self.temperature < 0.0 {
            return Err(GeneratorError::InvalidConfig("temperature must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub attempts: usize,
    pub parsed: usize,
    pub duplicates: usize,
    pub filtered_out: usize,
    /// Parseable fraction of attempts.
    pub validity: f64,
    /// Distinct canonical forms per parsed candidate.
    pub uniqueness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub unique: Vec<String>,
    pub stats: GenerationStats,
    /// False when the attempt budget ran out first; `unique` then holds the
    /// partial set.
    pub reached_target: bool,
}

/// Samples until `target_unique` canonical SMILES pass parsing, dedup, and
/// the enabled filters, or the attempt budget is exhausted.
pub fn generate_unique(
    sampler: &dyn SequenceSampler,
    vocab: &Vocabulary,
    request: &GenerationRequest,
    bounds: &AdmetBounds,
    motifs: &[MotifPattern],
    rng: &mut dyn RngCore,
) -> Result<GenerationOutcome, GeneratorError> {
    request.validate()?;
    let max_attempts = request.effective_max_attempts();
    let mut seen: HashSet<String> = HashSet::new();
    let mut unique = Vec::new();
    let mut stats = GenerationStats::default();
    while unique.len() < request.target_unique && stats.attempts < max_attempts {
        stats.attempts += 1;
        let body = sample_sequence(sampler, vocab, request.temperature, rng)?;
        let text = match detokenize(&body, vocab) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let mol = match parse_smiles(&text) {
            Ok(m) => m,
            Err(_) => continue,
        };
        stats.parsed += 1;
        let canon = canonical_string(&mol);
        if !seen.insert(canon.clone()) {
            stats.duplicates += 1;
            continue;
        }
        if request.apply_admet {
            let props = admet_properties(&mol, None);
            if !admet_filter(&props, bounds, false).pass {
                stats.filtered_out += 1;
                continue;
            }
        }
        if request.apply_motifs && functional_group_filter(&mol, motifs).is_some() {
            stats.filtered_out += 1;
            continue;
        }
        unique.push(canon);
    }
    if stats.attempts > 0 {
        stats.validity = stats.parsed as f64 / stats.attempts as f64;
    }
    if stats.parsed > 0 {
        stats.uniqueness = seen.len() as f64 / stats.parsed as f64;
    }
    Ok(GenerationOutcome {
        reached_target: unique.len() >= request.target_unique,
        unique,
        stats,
    })
}
