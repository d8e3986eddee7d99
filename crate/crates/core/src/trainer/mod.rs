//! Policy optimization: terminal-reward assignment, GAE, PPO with a clipped
//! surrogate, the RLVR driver, and DPO.

mod dpo;
mod optim;
mod ppo;
mod rlvr;

pub use dpo::{dpo_loss_and_grad, dpo_train, implicit_margins, pair_tokens, DpoConfig, TokenizedPair};
pub use optim::{Optimizer, OptimizerKind};
pub use ppo::{ppo_loss_and_grad, ppo_update, ppo_update_with, PpoLoss, PpoStats};
pub use rlvr::{
    rlvr_train, rlvr_train_with, think_token_count_of, Control, IterationReport, LengthBudget, Rollout, ScoredGeneration,
};

use serde::{Deserialize, Serialize};

use crate::policy::PolicyError;
use crate::rewards::{RewardError, RewardResult};
use crate::types::{ConfigError, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("trajectory has no generated tokens")]
    EmptyTrajectory,
    #[error("length mismatch: {rewards} rewards, {values} values")]
    LengthMismatch { rewards: usize, values: usize },
    #[error("non-finite loss or gradient ({0})")]
    NonFiniteLoss(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// PPO hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Must stay 0: there is no reference-policy penalty in the loss.
    pub kl_coeff: f64,
    pub samples_per_prompt: usize,
    pub max_seq_tokens: usize,
    pub epochs_per_batch: usize,
    pub step_size: f64,
    pub entropy_coeff: f64,
    /// Weight of the value-head squared error in the total loss.
    pub value_coeff: f64,
    /// Standardize advantages per batch (mean 0, std 1).
    pub normalize_advantages: bool,
    pub optimizer: OptimizerKind,
    pub temperature: f64,
    /// Prompts drawn per iteration; 0 uses every prompt.
    pub prompts_per_iteration: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gamma: 1.0,
            lambda: 1.0,
            kl_coeff: 0.0,
            samples_per_prompt: 16,
            max_seq_tokens: 128,
            epochs_per_batch: 2,
            step_size: 0.05,
            entropy_coeff: 0.0,
            value_coeff: 1.0,
            normalize_advantages: false,
            optimizer: OptimizerKind::Adam,
            temperature: 1.0,
            prompts_per_iteration: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::new(m));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("gamma and lambda must lie in [0, 1], got {} and {}", self.gamma, self.lambda));
        }
        if self.kl_coeff < 0.0 {
            return bad(format!("kl_coeff must be >= 0, got {}", self.kl_coeff));
        }
        if self.kl_coeff != 0.0 {
            return bad("kl_coeff > 0 is not supported: the objective carries no reference-policy penalty".into());
        }
        if self.samples_per_prompt == 0 || self.max_seq_tokens == 0 || self.epochs_per_batch == 0 {
            return bad("samples_per_prompt, max_seq_tokens and epochs_per_batch must be >= 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.entropy_coeff < 0.0 || self.value_coeff < 0.0 {
            return bad("entropy_coeff and value_coeff must be >= 0".into());
        }
        Ok(())
    }
}

/// Place the scalar reward on the final generated token.
pub fn assign_terminal_reward(traj: Trajectory, reward: &RewardResult) -> Result<Trajectory, TrainerError> {
    if traj.is_empty() {
        return Err(TrainerError::EmptyTrajectory);
    }
    Ok(Trajectory { terminal_reward: reward.value, ..traj })
}

/// Per-token rewards: zero everywhere but the last position.
pub fn token_rewards(traj: &Trajectory) -> Vec<f64> {
    let mut r = vec![0.0; traj.len()];
    if let Some(last) = r.last_mut() {
        *last = traj.terminal_reward;
    }
    r
}

/// Generalized advantage estimation with a zero bootstrap after the last step.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, TrainerError> {
    if rewards.len() != values.len() {
        return Err(TrainerError::LengthMismatch { rewards: rewards.len(), values: values.len() });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
    }
    Ok(adv)
}

/// Fill `traj.advantages` from its terminal reward and recorded values.
pub fn compute_advantages(traj: &mut Trajectory, gamma: f64, lambda: f64) -> Result<(), TrainerError> {
    traj.advantages = gae(&token_rewards(traj), &traj.values, gamma, lambda)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(n: usize) -> Trajectory {
        Trajectory {
            prompt_tokens: vec![3],
            gen_tokens: vec![3; n],
            behavior_logprobs: vec![0.0; n],
            values: vec![0.0; n],
            terminal_reward: 0.0,
            advantages: vec![],
        }
    }

    #[test]
    fn terminal_reward_lands_on_last_token() {
        let r = RewardResult { value: 1.0, acc_part: 1, fmt_part: 0 };
        let t = assign_terminal_reward(traj(3), &r).unwrap();
        assert_eq!(token_rewards(&t), [0.0, 0.0, 1.0]);
        let r = RewardResult { value: 0.2, acc_part: 0, fmt_part: 1 };
        assert_eq!(token_rewards(&assign_terminal_reward(traj(3), &r).unwrap()), [0.0, 0.0, 0.2]);
        assert!(matches!(assign_terminal_reward(traj(0), &r), Err(TrainerError::EmptyTrajectory)));
    }

    #[test]
    fn gae_examples() {
        assert_eq!(gae(&[0.0, 0.0, 1.0], &[0.5, 0.5, 0.5], 1.0, 1.0).unwrap(), [0.5, 0.5, 0.5]);
        assert_eq!(gae(&[0.0, 0.0], &[0.3, 0.1], 1.0, 1.0).unwrap(), [-0.3, -0.1]);
        assert!(matches!(gae(&[0.0], &[0.0, 1.0], 1.0, 1.0), Err(TrainerError::LengthMismatch { .. })));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = PpoConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!((c.clip_eps, c.gamma, c.lambda, c.kl_coeff, c.samples_per_prompt), (0.2, 1.0, 1.0, 0.0, 16));
        assert!(PpoConfig { clip_eps: 1.0, ..c }.validate().is_err());
        assert!(PpoConfig { gamma: 1.5, ..c }.validate().is_err());
        assert!(PpoConfig { kl_coeff: -0.1, ..c }.validate().is_err());
        assert!(PpoConfig { kl_coeff: 0.1, ..c }.validate().is_err());
    }
}
