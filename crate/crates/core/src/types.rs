//! Shared domain model: samples, parsed outputs, trajectories, preference
//! pairs, datasets and the small configuration records every stage reads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Input modality of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Text => f.write_str("text"),
            Modality::Audio => f.write_str("audio"),
        }
    }
}

/// One training item.
///
/// `audio_ref` is an opaque locator and is never decoded here; judges only
/// ever see the question text and the generated reasoning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub modality: Modality,
    pub question: String,
    #[serde(default)]
    pub audio_ref: Option<String>,
    pub answer_truth: String,
    #[serde(default)]
    pub native_think: Option<String>,
    #[serde(default)]
    pub response_truth: Option<String>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl Sample {
    pub fn text(id: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            modality: Modality::Text,
            question: question.into(),
            audio_ref: None,
            answer_truth: answer.into(),
            native_think: None,
            response_truth: None,
            tags: BTreeSet::new(),
        }
    }

    pub fn audio(
        id: impl Into<String>,
        audio_ref: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
    ) -> Self {
        Self {
            modality: Modality::Audio,
            audio_ref: Some(audio_ref.into()),
            ..Self::text(id, question, answer)
        }
    }

    pub fn with_think(mut self, think: impl Into<String>) -> Self {
        self.native_think = Some(think.into());
        self
    }

    pub fn with_response(mut self, response: impl Into<String>) -> Self {
        self.response_truth = Some(response.into());
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tags.insert(tag.into());
        self
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }
}

/// A parsed model response: the think span and the final reply.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningOutput {
    pub think: String,
    pub response: String,
}

impl ReasoningOutput {
    pub fn new(think: impl Into<String>, response: impl Into<String>) -> Self {
        Self { think: think.into(), response: response.into() }
    }
}

/// Token-id type shared by the toy policy and trajectories.
pub type TokenId = u32;

/// One sampled generation together with everything PPO needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_tokens: Vec<TokenId>,
    pub gen_tokens: Vec<TokenId>,
    pub behavior_logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub terminal_reward: f64,
    #[serde(default)]
    pub advantages: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.gen_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gen_tokens.is_empty()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.gen_tokens.len();
        if self.behavior_logprobs.len() != n || self.values.len() != n {
            out.push(format!(
                "length mismatch: {} tokens, {} logprobs, {} values",
                n,
                self.behavior_logprobs.len(),
                self.values.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.terminal_reward) {
            out.push(format!("terminal_reward {} outside [0,1]", self.terminal_reward));
        }
        out
    }
}

/// A prompt with a preferred and a dispreferred response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: ReasoningOutput,
    pub rejected: ReasoningOutput,
}

/// A sample rendered into the reasoning format, ready for supervised training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormattedSample {
    pub id: String,
    pub modality: Modality,
    pub question: String,
    pub target: String,
}

/// Anything that can live in a [`Dataset`] and be checked by [`validate_dataset`].
pub trait Record {
    /// Identity used for the uniqueness check, if the record has one.
    fn record_id(&self) -> Option<&str>;
    /// Per-record invariant violations.
    fn violations(&self) -> Vec<String>;
}

impl Record for Sample {
    fn record_id(&self) -> Option<&str> {
        Some(&self.id)
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push("sample with empty id".to_string());
        }
        if self.modality == Modality::Audio && self.audio_ref.is_none() {
            out.push(format!("audio sample without audio_ref: {}", self.id));
        }
        if self.answer_truth.trim().is_empty() {
            out.push(format!("empty answer_truth: {}", self.id));
        }
        out
    }
}

impl Record for PreferencePair {
    fn record_id(&self) -> Option<&str> {
        None
    }

    fn violations(&self) -> Vec<String> {
        if self.chosen == self.rejected {
            vec![format!("identical chosen and rejected for prompt: {}", self.prompt)]
        } else {
            Vec::new()
        }
    }
}

impl Record for FormattedSample {
    fn record_id(&self) -> Option<&str> {
        Some(&self.id)
    }

    fn violations(&self) -> Vec<String> {
        Vec::new()
    }
}

/// A named, ordered collection of records with string provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    pub name: String,
    pub samples: Vec<T>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl<T> Dataset<T> {
    pub fn new(name: impl Into<String>, samples: Vec<T>) -> Self {
        Self { name: name.into(), samples, provenance: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_provenance(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.provenance.insert(key.into(), value.to_string());
        self
    }

    pub fn set_provenance(&mut self, key: impl Into<String>, value: impl ToString) {
        self.provenance.insert(key.into(), value.to_string());
    }
}

/// Every invariant violation in `d`; empty iff the dataset is well formed.
///
/// Per-record violations come first in record order, then duplicate ids in
/// sorted order, so the report does not depend on sample order beyond the
/// per-record part.
pub fn validate_dataset<T: Record>(d: &Dataset<T>) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for rec in &d.samples {
        out.extend(rec.violations());
        if let Some(id) = rec.record_id() {
            *seen.entry(id).or_default() += 1;
        }
    }
    for (id, n) in seen {
        if n > 1 {
            out.push(format!("duplicate id: {id}"));
        }
    }
    out
}

/// How a response is compared with the ground-truth answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    /// Byte equality after trimming.
    Exact,
    /// Case-folded, whitespace-collapsed, trailing punctuation stripped.
    #[default]
    Normalized,
}

/// Weights of the composite audio reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSpec {
    pub w_acc: f64,
    pub w_fmt: f64,
    pub matcher: Matcher,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self { w_acc: 0.8, w_fmt: 0.2, matcher: Matcher::Normalized }
    }
}

impl RewardSpec {
    /// Correctness-only variant (no format term).
    pub fn accuracy_only() -> Self {
        Self { w_acc: 1.0, w_fmt: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.w_acc >= 0.0 && self.w_fmt >= 0.0) {
            return Err(ConfigError::new("reward weights must be non-negative"));
        }
        if (self.w_acc + self.w_fmt - 1.0).abs() > 1e-12 {
            return Err(ConfigError::new(format!(
                "reward weights must sum to 1, got {} + {}",
                self.w_acc, self.w_fmt
            )));
        }
        Ok(())
    }
}

/// Pass@k difficulty window and distillation sampling settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    pub k: usize,
    pub keep_min: usize,
    pub keep_max: usize,
    #[serde(rename = "distill_samples_K")]
    pub distill_samples_k: usize,
    pub temperature: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self { k: 8, keep_min: 3, keep_max: 6, distill_samples_k: 8, temperature: 1.0 }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::new("curation.k must be positive"));
        }
        if self.distill_samples_k == 0 {
            return Err(ConfigError::new("curation.distill_samples_K must be positive"));
        }
        if self.keep_min > self.keep_max || self.keep_max > self.k {
            return Err(ConfigError::new(format!(
                "keep window must satisfy 0 <= keep_min <= keep_max <= k, got {}..{} with k={}",
                self.keep_min, self.keep_max, self.k
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ConfigError::new("curation.temperature must be > 0"));
        }
        Ok(())
    }
}

/// Per-iteration training series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub mean_reward: Vec<f64>,
    /// Mean reasoning length (tokens in the think span).
    pub think_tokens: Vec<f64>,
    #[serde(default)]
    pub clip_fraction: Vec<f64>,
    /// Fraction of generations carrying a non-empty think span.
    #[serde(default)]
    pub think_fraction: Vec<f64>,
    #[serde(default)]
    pub notes: BTreeMap<String, f64>,
}

impl TrainingMetrics {
    pub fn len(&self) -> usize {
        self.mean_reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_reward.is_empty()
    }

    pub fn push(&mut self, mean_reward: f64, think_tokens: f64, clip_fraction: f64, think_fraction: f64) {
        self.mean_reward.push(mean_reward);
        self.think_tokens.push(think_tokens);
        self.clip_fraction.push(clip_fraction);
        self.think_fraction.push(think_fraction);
    }

    pub fn extend(&mut self, other: &TrainingMetrics) {
        self.mean_reward.extend_from_slice(&other.mean_reward);
        self.think_tokens.extend_from_slice(&other.think_tokens);
        self.clip_fraction.extend_from_slice(&other.clip_fraction);
        self.think_fraction.extend_from_slice(&other.think_fraction);
    }
}

/// State of the distillation loop at iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub t: usize,
    pub checkpoint_ref: String,
    pub distilled: Dataset<Sample>,
    pub metrics: TrainingMetrics,
}

/// An invariant violated by a configuration record.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> Dataset<Sample> {
        Dataset::new(
            "D_task",
            vec![
                Sample::text("s1", "2 + 3", "5"),
                Sample::text("s2", "1 + 1", "2"),
                Sample::audio("s3", "clip://3", "mood low", "sad"),
            ],
        )
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert!(validate_dataset(&three()).is_empty());
    }

    #[test]
    fn duplicate_id_reported() {
        let mut d = three();
        d.samples.push(Sample::text("s1", "q", "a"));
        assert_eq!(validate_dataset(&d), vec!["duplicate id: s1".to_string()]);
    }

    #[test]
    fn audio_without_ref_names_sample() {
        let mut d = three();
        d.samples[2].audio_ref = None;
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("s3"));
    }

    #[test]
    fn validation_is_idempotent_and_order_stable() {
        let mut d = three();
        d.samples.push(Sample::text("s2", "x", "y"));
        d.samples.push(Sample::text("s1", "x", ""));
        let a = validate_dataset(&d);
        assert_eq!(a, validate_dataset(&d));
        d.samples.reverse();
        let b = validate_dataset(&d);
        let (mut a, mut b) = (a, b);
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_pair_is_a_violation() {
        let o = ReasoningOutput::new("x", "y");
        let d = Dataset::new(
            "D_dpo",
            vec![PreferencePair { prompt: "p".into(), chosen: o.clone(), rejected: o }],
        );
        assert_eq!(validate_dataset(&d).len(), 1);
    }

    #[test]
    fn curation_config_window() {
        assert!(CurationConfig::default().validate().is_ok());
        let bad = CurationConfig { keep_min: 6, keep_max: 3, ..Default::default() };
        assert!(bad.validate().is_err());
        let zero = CurationConfig { k: 0, keep_min: 0, keep_max: 0, ..Default::default() };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn reward_spec_must_sum_to_one() {
        assert!(RewardSpec::default().validate().is_ok());
        assert!(RewardSpec::accuracy_only().validate().is_ok());
        let bad = RewardSpec { w_acc: 0.7, w_fmt: 0.2, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trajectory_invariants() {
        let t = Trajectory {
            prompt_tokens: vec![1],
            gen_tokens: vec![2, 3],
            behavior_logprobs: vec![-1.0],
            values: vec![0.0, 0.0],
            terminal_reward: 1.5,
            advantages: vec![],
        };
        assert_eq!(t.violations().len(), 2);
    }
}
