use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::Optimizer;
use super::ppo::{ppo_update_with, PpoStats};
use super::{assign_terminal_reward, compute_advantages, PpoConfig, TrainerError};
use crate::format::{parse_lenient, reasoning_present, think_token_count, FormatConfig};
use crate::policy::{ToyPolicy, Vocabulary};
use crate::rewards::{batch_objective, score_generation, RewardError, RewardResult};
use crate::seeds::{derive_seed, rng};
use crate::types::{Dataset, Modality, ReasoningOutput, RewardSpec, Sample, TokenId, TrainingMetrics};

/// Think-span length of a generated token sequence, as the reward sees it.
pub fn think_token_count_of(vocab: &Vocabulary, gen: &[TokenId]) -> usize {
    think_token_count(&parse_lenient(&vocab.detokenize(gen), &FormatConfig::default()).output)
}

/// Per-episode cap on generated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthBudget {
    Fixed(usize),
    /// `short` tokens with probability `short_prob`, else `long`. The policy
    /// never observes which budget it got.
    Stochastic { short: usize, long: usize, short_prob: f64 },
}

impl LengthBudget {
    pub fn draw(&self, seed: u64) -> usize {
        match *self {
            LengthBudget::Fixed(n) => n,
            LengthBudget::Stochastic { short, long, short_prob } => {
                if rng(seed).gen::<f64>() < short_prob {
                    short
                } else {
                    long
                }
            }
        }
    }

    pub fn max(&self) -> usize {
        match *self {
            LengthBudget::Fixed(n) => n,
            LengthBudget::Stochastic { short, long, .. } => short.max(long),
        }
    }

    /// `(budget, probability)` outcomes.
    pub fn outcomes(&self) -> Vec<(usize, f64)> {
        match *self {
            LengthBudget::Fixed(n) => vec![(n, 1.0)],
            LengthBudget::Stochastic { short, long, short_prob } => vec![(short, short_prob), (long, 1.0 - short_prob)],
        }
    }
}

/// Rollout settings beyond [`PpoConfig`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rollout {
    pub fmt: FormatConfig,
    /// Overrides `max_seq_tokens` when set.
    pub budget: Option<LengthBudget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredGeneration {
    pub sample_id: String,
    pub modality: Modality,
    pub raw: String,
    pub output: ReasoningOutput,
    pub reward: RewardResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    pub stats: PpoStats,
    /// Mean audio reward plus mean text reward over the batch.
    pub objective: f64,
    pub think_fraction: f64,
    pub generations: Vec<ScoredGeneration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// RLVR with default rollout settings and no per-iteration hook.
pub fn rlvr_train(
    p: &ToyPolicy,
    prompts: &Dataset<Sample>,
    spec: &RewardSpec,
    cfg: &PpoConfig,
    iterations: usize,
    seed: u64,
) -> Result<(ToyPolicy, TrainingMetrics), TrainerError> {
    rlvr_train_with(p, prompts, spec, cfg, iterations, seed, &Rollout::default(), |_| Control::Continue)
}

/// Sample, score, assign terminal rewards, estimate advantages and update,
/// `iterations` times. `on_iteration` sees each iteration's report after
/// the update and may stop training early.
#[allow(clippy::too_many_arguments)]
pub fn rlvr_train_with(
    p: &ToyPolicy,
    prompts: &Dataset<Sample>,
    spec: &RewardSpec,
    cfg: &PpoConfig,
    iterations: usize,
    seed: u64,
    rollout: &Rollout,
    mut on_iteration: impl FnMut(&IterationReport) -> Control,
) -> Result<(ToyPolicy, TrainingMetrics), TrainerError> {
    cfg.validate()?;
    spec.validate()?;
    if prompts.samples.iter().any(|s| s.answer_truth.trim().is_empty()) {
        return Err(RewardError::EmptyTruth.into());
    }
    let vocab = p.vocab().clone();
    let tokenized: Vec<Vec<TokenId>> = prompts.samples.iter().map(|s| vocab.tokenize(&s.question)).collect::<Result<_, _>>()?;
    let budget = rollout.budget.unwrap_or(LengthBudget::Fixed(cfg.max_seq_tokens));

    let mut policy = p.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.step_size);
    let mut metrics = TrainingMetrics::default();
    let n = prompts.len();
    for it in 0..iterations {
        let chosen: Vec<usize> = if cfg.prompts_per_iteration == 0 || cfg.prompts_per_iteration >= n {
            (0..n).collect()
        } else {
            let mut idx = index::sample(&mut rng(derive_seed(seed, &[it as u64, u64::MAX])), n, cfg.prompts_per_iteration).into_vec();
            idx.sort_unstable();
            idx
        };
        let mut batch = Vec::with_capacity(chosen.len() * cfg.samples_per_prompt);
        let mut scored = Vec::with_capacity(batch.capacity());
        for &j in &chosen {
            let sample = &prompts.samples[j];
            for k in 0..cfg.samples_per_prompt {
                let path = [it as u64, j as u64, k as u64];
                let max_len = budget.draw(derive_seed(seed ^ 0xB0D6E7, &path));
                let traj = policy.sample(&tokenized[j], cfg.temperature, max_len, derive_seed(seed, &path))?;
                let raw = vocab.detokenize(&traj.gen_tokens);
                let (output, reward) = score_generation(&raw, sample, spec, &rollout.fmt)?;
                let mut traj = assign_terminal_reward(traj, &reward)?;
                compute_advantages(&mut traj, cfg.gamma, cfg.lambda)?;
                batch.push(traj);
                scored.push(ScoredGeneration { sample_id: sample.id.clone(), modality: sample.modality, raw, output, reward });
            }
        }
        let (next, stats) = ppo_update_with(&policy, &batch, cfg, &mut opt)?;
        policy = next;

        let m = scored.len().max(1) as f64;
        let mean_reward = scored.iter().map(|g| g.reward.value).sum::<f64>() / m;
        let think_tokens = scored.iter().map(|g| think_token_count(&g.output) as f64).sum::<f64>() / m;
        let think_fraction = scored.iter().filter(|g| reasoning_present(&g.output)).count() as f64 / m;
        metrics.push(mean_reward, think_tokens, stats.clip_fraction, think_fraction);
        let items: Vec<_> = scored.iter().map(|g| (g.modality, g.reward)).collect();
        let objective = if items.is_empty() { 0.0 } else { batch_objective(&items)? };
        let report = IterationReport { iteration: it, stats, objective, think_fraction, generations: scored };
        if on_iteration(&report) == Control::Stop {
            break;
        }
    }
    Ok((policy, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{copy_vocabulary, generate, GeneratorSpec, TaskKind};

    fn copy_setup() -> (ToyPolicy, Dataset<Sample>) {
        let v = copy_vocabulary(3);
        let d = generate(&GeneratorSpec::new(TaskKind::CopyTask, 6, 1), &v).unwrap();
        (ToyPolicy::new(v, 2).unwrap(), d)
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (p, d) = copy_setup();
        let (q, m) = rlvr_train(&p, &d, &RewardSpec::default(), &PpoConfig::default(), 0, 1).unwrap();
        assert_eq!(q, p);
        assert!(m.is_empty());
    }

    #[test]
    fn fixed_seed_reproduces_metrics_bitwise() {
        let (p, d) = copy_setup();
        let cfg = PpoConfig { max_seq_tokens: 2, samples_per_prompt: 4, ..Default::default() };
        let run = || rlvr_train(&p, &d, &RewardSpec::default(), &cfg, 5, 42).unwrap();
        let (qa, a) = run();
        let (qb, b) = run();
        assert_eq!(qa, qb);
        let bits = |m: &TrainingMetrics| m.mean_reward.iter().chain(&m.think_tokens).map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn hook_can_stop_early() {
        let (p, d) = copy_setup();
        let cfg = PpoConfig { max_seq_tokens: 1, samples_per_prompt: 2, ..Default::default() };
        let mut seen = 0;
        let (_, m) = rlvr_train_with(&p, &d, &RewardSpec::default(), &cfg, 10, 3, &Rollout::default(), |r| {
            seen += 1;
            assert_eq!(r.generations.len(), 12);
            if r.iteration == 2 {
                Control::Stop
            } else {
                Control::Continue
            }
        })
        .unwrap();
        assert_eq!((seen, m.len()), (3, 3));
    }

    #[test]
    fn stochastic_budget_frequencies() {
        let b = LengthBudget::Stochastic { short: 3, long: 6, short_prob: 0.1 };
        let shorts = (0..10_000).filter(|&i| b.draw(derive_seed(5, &[i])) == 3).count();
        // 3 sigma of Binomial(10000, 0.1) is 90
        assert!((shorts as i64 - 1000).abs() < 90, "{shorts}");
        assert_eq!(b.max(), 6);
    }
}
