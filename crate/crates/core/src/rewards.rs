//! Verified rewards: binary answer verification for text, a weighted
//! correctness + format-presence reward for audio, and the batch estimator
//! of the combined objective.

use serde::{Deserialize, Serialize};

use crate::format::{parse_lenient, reasoning_present, FormatConfig};
use crate::types::{Matcher, Modality, ReasoningOutput, RewardSpec, Sample};

/// Tag marking multiple-choice samples; these are always matched exactly.
pub const MULTIPLE_CHOICE_TAG: &str = "multiple-choice";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("ground-truth answer is empty")]
    EmptyTruth,
    #[error("reward weights must be non-negative and sum to 1 (got {w_acc} + {w_fmt})")]
    InvalidSpec { w_acc: f64, w_fmt: f64 },
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardResult {
    pub value: f64,
    pub acc_part: u8,
    pub fmt_part: u8,
}

/// Case-fold, collapse internal whitespace, strip trailing punctuation.
pub fn normalize_answer(s: &str) -> String {
    let folded = s.to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

/// 1 iff `a` matches `a_star` under `matcher`.
pub fn verify_answer(a: &str, a_star: &str, matcher: Matcher) -> Result<u8, RewardError> {
    if a_star.trim().is_empty() {
        return Err(RewardError::EmptyTruth);
    }
    let hit = match matcher {
        Matcher::Exact => a.trim() == a_star.trim(),
        Matcher::Normalized => normalize_answer(a) == normalize_answer(a_star),
    };
    Ok(u8::from(hit))
}

/// Matcher for a given sample: multiple-choice letters compare exactly,
/// everything else uses the spec's matcher.
pub fn matcher_for(sample: &Sample, spec: &RewardSpec) -> Matcher {
    if sample.has_tag(MULTIPLE_CHOICE_TAG) {
        Matcher::Exact
    } else {
        spec.matcher
    }
}

/// Binary verification reward; the think span is ignored.
pub fn text_reward(out: &ReasoningOutput, a_star: &str, spec: &RewardSpec) -> Result<RewardResult, RewardError> {
    let acc = verify_answer(&out.response, a_star, spec.matcher)?;
    Ok(RewardResult { value: f64::from(acc), acc_part: acc, fmt_part: 0 })
}

/// `w_acc * correct + w_fmt * reasoning_present`.
pub fn audio_reward(out: &ReasoningOutput, a_star: &str, spec: &RewardSpec) -> Result<RewardResult, RewardError> {
    if spec.validate().is_err() {
        return Err(RewardError::InvalidSpec { w_acc: spec.w_acc, w_fmt: spec.w_fmt });
    }
    let acc = verify_answer(&out.response, a_star, spec.matcher)?;
    let fmt = u8::from(reasoning_present(out));
    Ok(RewardResult {
        value: spec.w_acc * f64::from(acc) + spec.w_fmt * f64::from(fmt),
        acc_part: acc,
        fmt_part: fmt,
    })
}

/// Score a raw generation for `sample`.
///
/// Malformed generations get no format credit and are verified against the
/// whole raw string.
pub fn score_generation(
    raw: &str,
    sample: &Sample,
    spec: &RewardSpec,
    fmt: &FormatConfig,
) -> Result<(ReasoningOutput, RewardResult), RewardError> {
    let parsed = parse_lenient(raw, fmt);
    let spec = RewardSpec { matcher: matcher_for(sample, spec), ..*spec };
    let reward = match sample.modality {
        Modality::Text => text_reward(&parsed.output, &sample.answer_truth, &spec)?,
        Modality::Audio => audio_reward(&parsed.output, &sample.answer_truth, &spec)?,
    };
    Ok((parsed.output, reward))
}

/// Mean audio reward over audio items plus mean text reward over text items.
/// A modality with no items contributes 0.
pub fn batch_objective(items: &[(Modality, RewardResult)]) -> Result<f64, RewardError> {
    if items.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (m, r) in items {
        let i = usize::from(*m == Modality::Audio);
        sums[i] += r.value;
        counts[i] += 1;
    }
    Ok((0..2)
        .filter(|&i| counts[i] > 0)
        .map(|i| sums[i] / counts[i] as f64)
        .sum())
}

/// One line of the reward audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub sample_id: String,
    pub acc_part: u8,
    pub fmt_part: u8,
    pub value: f64,
}

impl AuditRecord {
    pub fn new(sample_id: impl Into<String>, r: &RewardResult) -> Self {
        Self { sample_id: sample_id.into(), acc_part: r.acc_part, fmt_part: r.fmt_part, value: r.value }
    }
}
