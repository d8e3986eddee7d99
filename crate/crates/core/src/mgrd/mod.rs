//! The distillation loop: self-distillation, grounded-chain filtering,
//! joint SFT and multimodal RL, repeated; plus self-cognition correction,
//! the format-reward ablation and collapse analytics.

pub mod ablation;
pub mod cognition;
mod collapse;
pub mod pipeline;

pub use ablation::{ablation_run, enumerate_optimal, AblationResult, AblationVariant, CollapseConfig, Enumeration, ThinkBudgetTask};
pub use cognition::{run_cognition_correction, split_holdout, CognitionConfig, CognitionOutcome, CognitionReport};
pub use collapse::{detect_collapse, CollapseReport, SeriesTooShort};
pub use pipeline::{
    coldstart, run_iteration, run_loop, CheckpointStore, CorpusConfig, DirStore, LoopConfig, LoopOutcome, LoopParams, MemoryStore, Pools,
};

use crate::curation::CurationError;
use crate::jsonl::DataError;
use crate::policy::{GenerationError, PolicyError};
use crate::rewards::RewardError;
use crate::trainer::TrainerError;
use crate::types::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum MgrdError {
    #[error("iteration {iteration}: filter retained no distilled chains ({histogram})")]
    EmptyDistilledSet { iteration: usize, histogram: String },
    #[error(transparent)]
    SeriesTooShort(#[from] SeriesTooShort),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Data(#[from] DataError),
}
