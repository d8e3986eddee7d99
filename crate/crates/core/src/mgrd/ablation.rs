//! Format-reward ablation on an exactly enumerable micro-task.
//!
//! One audio prompt `q` with answer `a`. Every episode gets a hidden length
//! budget: usually long enough for `<think> w </think> a`, occasionally only
//! three tokens, which fits `<think> </think> a` but truncates any
//! think-bearing answer. Under accuracy-only reward the empty-think plan is
//! therefore optimal; the format term makes think-bearing plans dominant.

use serde::{Deserialize, Serialize};

use super::collapse::{detect_collapse, CollapseReport};
use super::MgrdError;
use crate::format::{parse_lenient, reasoning_present, FormatConfig};
use crate::policy::{SftExample, ToyPolicy, Vocabulary};
use crate::rewards::score_generation;
use crate::trainer::{rlvr_train_with, Control, LengthBudget, PpoConfig, Rollout};
use crate::types::{Dataset, RewardSpec, Sample, TokenId, TrainingMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    WithFormatReward,
    AccuracyOnly,
}

impl AblationVariant {
    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::WithFormatReward => "with_format_reward",
            AblationVariant::AccuracyOnly => "accuracy_only",
        }
    }

    pub fn reward_spec(self, base: &RewardSpec) -> RewardSpec {
        match self {
            AblationVariant::WithFormatReward => *base,
            AblationVariant::AccuracyOnly => RewardSpec { matcher: base.matcher, ..RewardSpec::accuracy_only() },
        }
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with_format_reward" => Ok(AblationVariant::WithFormatReward),
            "accuracy_only" => Ok(AblationVariant::AccuracyOnly),
            other => Err(format!("unknown ablation variant {other:?}")),
        }
    }
}

/// The think-penalized micro-task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThinkBudgetTask {
    pub short_budget: usize,
    pub long_budget: usize,
    pub short_prob: f64,
    /// Share of cold-start targets that carry a think span.
    pub coldstart_think_share: f64,
    pub coldstart_steps: usize,
    pub coldstart_step_size: f64,
    pub window: usize,
}

impl Default for ThinkBudgetTask {
    fn default() -> Self {
        Self {
            short_budget: 3,
            long_budget: 6,
            short_prob: 0.1,
            coldstart_think_share: 0.7,
            coldstart_steps: 300,
            coldstart_step_size: 1.0,
            window: 4,
        }
    }
}

pub const PROMPT: &str = "q";
pub const ANSWER: &str = "a";
const THINK_TARGET: &str = "<think>w</think>\na";
const EMPTY_TARGET: &str = "<think>\n\n</think>\na";

impl ThinkBudgetTask {
    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(["q", "w", "a", "b"]).expect("micro-task vocabulary is well formed")
    }

    pub fn budget(&self) -> LengthBudget {
        LengthBudget::Stochastic { short: self.short_budget, long: self.long_budget, short_prob: self.short_prob }
    }

    pub fn prompts(&self) -> Dataset<Sample> {
        Dataset::new("think_budget", vec![Sample::audio("tb-0", "clip://tb-0", PROMPT, ANSWER)])
    }

    /// Cold-start policy: SFT on a 10-target mix of think-bearing and
    /// empty-think answers in the configured proportion.
    pub fn coldstart_policy(&self) -> Result<ToyPolicy, MgrdError> {
        let vocab = self.vocab();
        let n_think = (self.coldstart_think_share * 10.0).round() as usize;
        let batch = (0..10)
            .map(|i| SftExample::from_text(&vocab, PROMPT, if i < n_think { THINK_TARGET } else { EMPTY_TARGET }))
            .collect::<Result<Vec<_>, _>>()?;
        let mut p = ToyPolicy::new(vocab, self.window)?;
        p.sft_train(&batch, self.coldstart_steps, self.coldstart_step_size)?;
        Ok(p)
    }

    /// Expected reward of a full generation over the budget distribution.
    pub fn expected_reward(&self, gen: &[TokenId], spec: &RewardSpec) -> Result<f64, MgrdError> {
        let vocab = self.vocab();
        let sample = &self.prompts().samples[0];
        let fmt = FormatConfig::default();
        let mut total = 0.0;
        for (budget, prob) in self.budget().outcomes() {
            let raw = vocab.detokenize(&gen[..gen.len().min(budget)]);
            total += prob * score_generation(&raw, sample, spec, &fmt)?.1.value;
        }
        Ok(total)
    }

    /// True iff the untruncated generation carries a non-empty think span.
    pub fn think_bearing(&self, gen: &[TokenId]) -> bool {
        reasoning_present(&parse_lenient(&self.vocab().detokenize(gen), &FormatConfig::default()).output)
    }
}

/// Result of exhaustively scoring every possible generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub n_trajectories: usize,
    pub best_value: f64,
    /// All generations attaining `best_value`.
    pub optimal: Vec<Vec<TokenId>>,
}

impl Enumeration {
    pub fn all_optimal_think_bearing(&self, task: &ThinkBudgetTask) -> bool {
        self.optimal.iter().all(|g| task.think_bearing(g))
    }

    pub fn some_optimal_empty_think(&self, task: &ThinkBudgetTask) -> bool {
        self.optimal.iter().any(|g| !task.think_bearing(g))
    }
}

/// Score every generation the policy could emit: each token sequence of
/// length `1..=long_budget` that ends at its first EOS or at the budget.
pub fn enumerate_optimal(task: &ThinkBudgetTask, spec: &RewardSpec) -> Result<Enumeration, MgrdError> {
    let vocab = task.vocab();
    let v = vocab.len() as TokenId;
    let eos = vocab.eos_id();
    let max_len = task.long_budget;
    let mut best = f64::NEG_INFINITY;
    let mut optimal = Vec::new();
    let mut n = 0;
    let mut stack: Vec<Vec<TokenId>> = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        for tok in 0..v {
            let mut g = prefix.clone();
            g.push(tok);
            if tok != eos && g.len() < max_len {
                stack.push(g);
                continue;
            }
            n += 1;
            let value = task.expected_reward(&g, spec)?;
            // values are finite sums of at most two dyadic-ish products; compare with a tiny slack
            if value > best + 1e-12 {
                best = value;
                optimal.clear();
                optimal.push(g);
            } else if (value - best).abs() <= 1e-12 {
                optimal.push(g);
            }
        }
    }
    optimal.sort();
    Ok(Enumeration { n_trajectories: n, best_value: best, optimal })
}

/// Outcome of one ablation variant.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub variant: AblationVariant,
    pub metrics: TrainingMetrics,
    pub collapse: CollapseReport,
    pub final_policy: ToyPolicy,
}

/// Collapse detection knobs shared by the ablation and reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseConfig {
    pub window: usize,
    pub threshold: f64,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        Self { window: 10, threshold: 0.5 }
    }
}

/// Train the cold-start policy on the micro-task under one reward variant.
pub fn ablation_run(
    variant: AblationVariant,
    task: &ThinkBudgetTask,
    base_spec: &RewardSpec,
    ppo: &PpoConfig,
    collapse: &CollapseConfig,
    iterations: usize,
    seed: u64,
) -> Result<AblationResult, MgrdError> {
    let start = task.coldstart_policy()?;
    let spec = variant.reward_spec(base_spec);
    let rollout = Rollout { fmt: FormatConfig::default(), budget: Some(task.budget()) };
    let (final_policy, metrics) =
        rlvr_train_with(&start, &task.prompts(), &spec, ppo, iterations, seed, &rollout, |_| Control::Continue)?;
    let report = detect_collapse(&metrics.think_tokens, collapse.window, collapse.threshold)?;
    Ok(AblationResult { variant, metrics, collapse: report, final_policy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_facts() {
        let task = ThinkBudgetTask::default();
        let composite = enumerate_optimal(&task, &RewardSpec::default()).unwrap();
        assert!((composite.best_value - 0.9).abs() < 1e-12);
        assert!(composite.all_optimal_think_bearing(&task));
        let acc = enumerate_optimal(&task, &RewardSpec::accuracy_only()).unwrap();
        assert!((acc.best_value - 1.0).abs() < 1e-12);
        assert!(acc.some_optimal_empty_think(&task));
        // 7 tokens, length <= 6: sum_{l<6} 6^(l-1) sequences ending in EOS plus 7*6^5 at the cap
        let expected: usize = (1..6).map(|l| 6usize.pow(l - 1)).sum::<usize>() + 7 * 6usize.pow(5);
        assert_eq!(composite.n_trajectories, expected);
    }

    #[test]
    fn coldstart_mix() {
        let task = ThinkBudgetTask::default();
        let p = task.coldstart_policy().unwrap();
        let v = p.vocab();
        let lp = p.logprobs(&[v.id("q").unwrap(), v.open_id()]);
        let think = lp[v.id("w").unwrap() as usize].exp();
        assert!((think - 0.7).abs() < 0.05, "{think}");
    }
}
