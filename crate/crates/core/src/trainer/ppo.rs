use serde::{Deserialize, Serialize};

use super::optim::Optimizer;
use super::rlvr::think_token_count_of;
use super::{PpoConfig, TrainerError};
use crate::policy::{PolicyGrad, ToyPolicy};
use crate::types::Trajectory;

/// Loss components of one PPO evaluation, all per-token means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoLoss {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Fraction of tokens whose clipped term was selected by the `min`,
    /// i.e. `ratio > 1+eps` with positive advantage or `ratio < 1-eps` with
    /// negative advantage. Those tokens contribute no policy gradient.
    pub clip_fraction: f64,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub mean_reward: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub mean_think_tokens: f64,
    /// Total loss before each optimizer step.
    pub losses: Vec<f64>,
}

fn normalized_advantages(batch: &[Trajectory], normalize: bool) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = batch.iter().map(|t| t.advantages.clone()).collect();
    if !normalize {
        return raw;
    }
    let all: Vec<f64> = raw.iter().flatten().copied().collect();
    if all.is_empty() {
        return raw;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    raw.into_iter().map(|v| v.into_iter().map(|a| (a - mean) / (std + 1e-8)).collect()).collect()
}

/// Clipped-surrogate loss plus value and entropy terms, with the exact
/// gradient. Averages are taken over every generated token in the batch.
pub fn ppo_loss_and_grad(p: &ToyPolicy, batch: &[Trajectory], cfg: &PpoConfig) -> Result<(PpoLoss, PolicyGrad), TrainerError> {
    for t in batch {
        if t.advantages.len() != t.len() || t.behavior_logprobs.len() != t.len() || t.values.len() != t.len() {
            return Err(TrainerError::LengthMismatch { rewards: t.advantages.len(), values: t.values.len() });
        }
    }
    let mut grad = PolicyGrad::zeros_like(p);
    let n_tokens: usize = batch.iter().map(Trajectory::len).sum();
    if n_tokens == 0 {
        let zero = PpoLoss { total: 0.0, policy: 0.0, value: 0.0, entropy: 0.0, clip_fraction: 0.0, mean_ratio: 1.0 };
        return Ok((zero, grad));
    }
    let inv = 1.0 / n_tokens as f64;
    let inv_temp = 1.0 / cfg.temperature;
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let advantages = normalized_advantages(batch, cfg.normalize_advantages);

    let (mut policy_loss, mut value_loss, mut entropy, mut ratio_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut clipped = 0usize;
    for (traj, adv) in batch.iter().zip(&advantages) {
        for (t, &a) in adv.iter().enumerate().take(traj.len()) {
            let feats = p.features(&traj.prompt_tokens, &traj.gen_tokens[..t]);
            let lp = p.logprobs_at(&feats, cfg.temperature);
            let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            let a_tok = traj.gen_tokens[t] as usize;

            let ratio = (lp[a_tok] - traj.behavior_logprobs[t]).exp();
            ratio_sum += ratio;
            let unclipped = ratio * a;
            let clipped_term = ratio.clamp(lo, hi) * a;
            policy_loss -= unclipped.min(clipped_term) * inv;

            let mut dz = vec![0.0; probs.len()];
            if unclipped <= clipped_term {
                // d(-ratio*A)/dz = -ratio*A*(onehot - p)/T
                let c = -unclipped * inv * inv_temp;
                for (d, pk) in dz.iter_mut().zip(&probs) {
                    *d -= c * pk;
                }
                dz[a_tok] += c;
            } else {
                clipped += 1;
            }

            let h: f64 = -probs.iter().zip(&lp).map(|(pk, l)| if *pk > 0.0 { pk * l } else { 0.0 }).sum::<f64>();
            entropy += h * inv;
            if cfg.entropy_coeff > 0.0 {
                // d(-c*H)/dz_k = c * p_k (log p_k + H) / T
                let c = cfg.entropy_coeff * inv * inv_temp;
                for ((d, pk), l) in dz.iter_mut().zip(&probs).zip(&lp) {
                    if *pk > 0.0 {
                        *d += c * pk * (l + h);
                    }
                }
            }
            p.accumulate(&mut grad, &feats, &dz);

            // value target: the return, advantage plus the behavior value
            let target = traj.advantages[t] + traj.values[t];
            let err = p.value_at(&feats) - target;
            value_loss += err * err * inv;
            for &f in &feats {
                grad.value_weights[f] += cfg.value_coeff * 2.0 * err * inv;
            }
        }
    }
    let total = policy_loss + cfg.value_coeff * value_loss - cfg.entropy_coeff * entropy;
    if !total.is_finite() || !grad.is_finite() {
        return Err(TrainerError::NonFiniteLoss(format!("total loss {total}")));
    }
    let loss = PpoLoss {
        total,
        policy: policy_loss,
        value: value_loss,
        entropy,
        clip_fraction: clipped as f64 / n_tokens as f64,
        mean_ratio: ratio_sum * inv,
    };
    Ok((loss, grad))
}

/// `epochs_per_batch` full-batch steps with a fresh plain-SGD optimizer.
pub fn ppo_update(p: &ToyPolicy, batch: &[Trajectory], cfg: &PpoConfig) -> Result<(ToyPolicy, PpoStats), TrainerError> {
    let mut opt = Optimizer::new(cfg.optimizer, cfg.step_size);
    ppo_update_with(p, batch, cfg, &mut opt)
}

/// Like [`ppo_update`] but with a caller-owned optimizer whose state
/// persists across batches.
pub fn ppo_update_with(
    p: &ToyPolicy,
    batch: &[Trajectory],
    cfg: &PpoConfig,
    opt: &mut Optimizer,
) -> Result<(ToyPolicy, PpoStats), TrainerError> {
    cfg.validate()?;
    let mut next = p.clone();
    let (mut ratio, mut clip) = (0.0, 0.0);
    let mut losses = Vec::with_capacity(cfg.epochs_per_batch);
    for _ in 0..cfg.epochs_per_batch {
        let (loss, grad) = ppo_loss_and_grad(&next, batch, cfg)?;
        ratio += loss.mean_ratio;
        clip += loss.clip_fraction;
        losses.push(loss.total);
        opt.step(&mut next, &grad);
    }
    let epochs = cfg.epochs_per_batch as f64;
    let n = batch.len().max(1) as f64;
    let stats = PpoStats {
        mean_reward: batch.iter().map(|t| t.terminal_reward).sum::<f64>() / n,
        mean_ratio: ratio / epochs,
        clip_fraction: clip / epochs,
        mean_think_tokens: batch.iter().map(|t| think_token_count_of(p.vocab(), &t.gen_tokens) as f64).sum::<f64>() / n,
        losses,
    };
    Ok((next, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Vocabulary;
    use crate::trainer::compute_advantages;

    fn policy(seed: u64) -> ToyPolicy {
        ToyPolicy::random(Vocabulary::new(["a", "b", "c"]).unwrap(), 2, 0.5, seed).unwrap()
    }

    fn batch(p: &ToyPolicy, rewards: &[f64]) -> Vec<Trajectory> {
        rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut t = p.sample(&[3, 4], 1.0, 4, i as u64).unwrap();
                t.terminal_reward = r;
                compute_advantages(&mut t, 1.0, 1.0).unwrap();
                t
            })
            .collect()
    }

    /// Token-level surrogate as written, for a single ratio/advantage.
    fn surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
        (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
    }

    #[test]
    fn clip_examples() {
        assert!((surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn on_policy_ratio_is_one_and_nothing_clips() {
        let p = policy(1);
        let b = batch(&p, &[1.0, 0.0, 0.2]);
        let (loss, _) = ppo_loss_and_grad(&p, &b, &PpoConfig::default()).unwrap();
        assert!((loss.mean_ratio - 1.0).abs() < 1e-12);
        assert_eq!(loss.clip_fraction, 0.0);
    }

    #[test]
    fn zero_advantages_zero_policy_gradient() {
        let p = policy(2);
        let mut b = batch(&p, &[1.0, 0.0]);
        for t in &mut b {
            t.advantages = vec![0.0; t.len()];
        }
        let (_, g) = ppo_loss_and_grad(&p, &b, &PpoConfig::default()).unwrap();
        assert!(g.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn clip_fraction_matches_recount() {
        let p = policy(3);
        let mut b = batch(&p, &[1.0, 0.0, 0.6, 0.3]);
        // perturb the behavior logprobs so ratios spread out
        for (i, t) in b.iter_mut().enumerate() {
            for (j, lp) in t.behavior_logprobs.iter_mut().enumerate() {
                *lp += 0.4 * (((i * 7 + j * 3) % 5) as f64 - 2.0);
            }
        }
        let cfg = PpoConfig::default();
        let (loss, _) = ppo_loss_and_grad(&p, &b, &cfg).unwrap();
        let mut n = 0;
        let mut hits = 0;
        for t in &b {
            for k in 0..t.len() {
                let lp = p.logprobs(&[&t.prompt_tokens[..], &t.gen_tokens[..k]].concat());
                let r = (lp[t.gen_tokens[k] as usize] - t.behavior_logprobs[k]).exp();
                let a = t.advantages[k];
                n += 1;
                hits += usize::from((r > 1.2 && a > 0.0) || (r < 0.8 && a < 0.0));
            }
        }
        assert!(hits > 0);
        assert_eq!(loss.clip_fraction, hits as f64 / n as f64);
    }

    #[test]
    fn non_finite_aborts() {
        let p = policy(4);
        let mut b = batch(&p, &[1.0]);
        b[0].advantages[0] = f64::NAN;
        assert!(matches!(ppo_loss_and_grad(&p, &b, &PpoConfig::default()), Err(TrainerError::NonFiniteLoss(_))));
    }

    #[test]
    fn update_raises_rewarded_sequence() {
        let p = policy(5);
        let b = batch(&p, &[1.0, 0.0, 0.0, 0.0]);
        let cfg = PpoConfig { epochs_per_batch: 4, step_size: 0.5, ..Default::default() };
        let (next, stats) = ppo_update(&p, &b, &cfg).unwrap();
        let lp = |q: &ToyPolicy| q.sequence_logprob(&b[0].prompt_tokens, &b[0].gen_tokens);
        assert!(lp(&next) > lp(&p));
        assert_eq!(stats.losses.len(), 4);
        assert_eq!(stats.mean_reward, 0.25);
    }
}
