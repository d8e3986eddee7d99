//! Post-training pipeline for grounded reasoning models, verifiable at desk
//! scale against a built-in toy policy.

pub mod config;
pub mod corpus;
pub mod curation;
pub mod format;
pub mod jsonl;
pub mod judges;
pub mod mgrd;
pub mod policy;
pub mod report;
pub mod rewards;
pub mod seeds;
pub mod trainer;
pub mod types;
