//! SMILES sequence generators: a decoder-only transformer and a Markov
//! baseline behind one sampling interface, plus versioned checkpoints.

mod markov;
mod model;
mod sample;
mod train;

pub use markov::{fit_markov, MarkovModel, DEFAULT_MARKOV_ORDER};
pub use model::{GptModel, ModelConfig};
pub use sample::{
    generate_unique, sample_sequence, GenerationOutcome, GenerationRequest, GenerationStats,
    SequenceSampler,
};
pub use train::{train, Optimizer, TrainReport, TrainSchedule};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::fnv1a;
use crate::smiles::Vocabulary;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("sequence length {len} exceeds the model limit {max}")]
    LengthExceeded { len: usize, max: usize },
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("checkpoint version {found} is unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint was built for a different vocabulary")]
    VocabMismatch,
    #[error("checkpoint serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Stable hash of the vocabulary token list, stored in checkpoints so a
/// model is never sampled against ids it was not trained on.
pub fn vocabulary_hash(vocab: &Vocabulary) -> u64 {
    let mut bytes = Vec::new();
    for token in vocab.tokens() {
        bytes.extend_from_slice(token.as_bytes());
        bytes.push(0);
    }
    fnv1a(&bytes)
}

/// Either trained generator backend, as persisted in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorModel {
    Gpt(GptModel),
    Markov(MarkovModel),
}

impl GeneratorModel {
    /// Longest token body the model was built for, markers excluded.
    pub fn block_size(&self) -> usize {
        match self {
            GeneratorModel::Gpt(m) => m.config().block_size,
            GeneratorModel::Markov(m) => m.block_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub vocab_hash: u64,
    pub model: GeneratorModel,
}

impl Checkpoint {
    pub fn new(model: GeneratorModel, vocab: &Vocabulary) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            vocab_hash: vocabulary_hash(vocab),
            model,
        }
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), GeneratorError> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, GeneratorError> {
        let ckpt: Checkpoint = serde_json::from_reader(reader)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(GeneratorError::CheckpointVersion {
                found: ckpt.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ckpt)
    }

    pub fn verify_vocab(&self, vocab: &Vocabulary) -> Result<(), GeneratorError> {
        if self.vocab_hash != vocabulary_hash(vocab) {
            return Err(GeneratorError::VocabMismatch);
        }
        Ok(())
    }
}
