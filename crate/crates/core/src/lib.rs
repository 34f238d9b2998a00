//! Core algorithms for an active-learning molecular generation engine.
//!
//! The crate is organized around the stages of the loop: parse and tokenize
//! SMILES strings, compute descriptors, project them into a proxy space,
//! cluster the projections, score a small sample, assemble a weighted
//! training set, and fine-tune a generator on it.

pub mod clustering;
pub mod descriptors;
pub mod filters;
pub mod generator;
pub mod metrics;
pub mod pipeline;
pub mod proxy;
pub mod rng;
pub mod sampling;
pub mod scoring;
pub mod smiles;

pub use clustering::{Clustering, ScoringSample};
pub use descriptors::{AdmetProperties, DescriptorVector};
pub use filters::{AdmetBounds, MotifPattern};
pub use generator::{
    Checkpoint, GenerationOutcome, GenerationRequest, GeneratorModel, GptModel, MarkovModel,
    ModelConfig, SequenceSampler, TrainSchedule,
};
pub use metrics::{Fingerprint, GenerationMetrics};
pub use pipeline::{IterationState, IterationStats, LoopMode, PipelineError, RunConfig};
pub use proxy::{PcaModel, ProxyPoint};
pub use sampling::{ALTrainingSet, SamplingMethod};
pub use scoring::{InteractionFingerprint, ScoreRecord, ScoreThreshold, WeightTable};
pub use smiles::{Molecule, Vocabulary};
