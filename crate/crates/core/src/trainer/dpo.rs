use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::format::{emit, FormatConfig};
use crate::policy::{log_softmax, PolicyGrad, PolicyError, ToyPolicy};
use crate::types::{ConfigError, PreferencePair, TokenId};

/// Preference-optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f64,
    pub step_size: f64,
    pub steps: usize,
    /// Where the frozen reference policy comes from; `None` means the
    /// checkpoint being optimized, captured before the first step.
    pub reference_checkpoint: Option<String>,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self { beta: 0.1, step_size: 1.0, steps: 200, reference_checkpoint: None }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ConfigError::new(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(ConfigError::new(format!("step_size must be positive, got {}", self.step_size)));
        }
        Ok(())
    }
}

/// A preference pair in token space; responses end with EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPair {
    pub prompt: Vec<TokenId>,
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
}

/// Tokenize pairs over the policy vocabulary, rendering each side in the
/// reasoning format.
pub fn pair_tokens(p: &ToyPolicy, pairs: &[PreferencePair], fmt: &FormatConfig) -> Result<Vec<TokenizedPair>, PolicyError> {
    let v = p.vocab();
    let side = |o| -> Result<Vec<TokenId>, PolicyError> {
        let mut t = v.tokenize(&emit(o, fmt))?;
        t.push(v.eos_id());
        Ok(t)
    };
    pairs
        .iter()
        .map(|pair| {
            Ok(TokenizedPair { prompt: v.tokenize(&pair.prompt)?, chosen: side(&pair.chosen)?, rejected: side(&pair.rejected)? })
        })
        .collect()
}

/// `-log sigmoid(x)` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Add `scale * d log pi(target | prompt) / d weights` into `grad`.
fn accumulate_seq_grad(p: &ToyPolicy, grad: &mut PolicyGrad, prompt: &[TokenId], target: &[TokenId], scale: f64) {
    for t in 0..target.len() {
        let feats = p.features(prompt, &target[..t]);
        let lp = p.logprobs_at(&feats, 1.0);
        let mut dz: Vec<f64> = lp.iter().map(|l| -scale * l.exp()).collect();
        dz[target[t] as usize] += scale;
        p.accumulate(grad, &feats, &dz);
    }
}

fn seq_logprob(p: &ToyPolicy, prompt: &[TokenId], target: &[TokenId]) -> f64 {
    (0..target.len())
        .map(|t| log_softmax(&p.logits(&[prompt, &target[..t]].concat()), 1.0)[target[t] as usize])
        .sum()
}

/// Log-ratio differences `(log pi(c) - log ref(c)) - (log pi(r) - log ref(r))`.
fn deltas(p: &ToyPolicy, reference: &ToyPolicy, pairs: &[TokenizedPair]) -> Vec<f64> {
    pairs
        .iter()
        .map(|x| {
            let c = seq_logprob(p, &x.prompt, &x.chosen) - seq_logprob(reference, &x.prompt, &x.chosen);
            let r = seq_logprob(p, &x.prompt, &x.rejected) - seq_logprob(reference, &x.prompt, &x.rejected);
            c - r
        })
        .collect()
}

/// `beta * delta` per pair.
pub fn implicit_margins(p: &ToyPolicy, reference: &ToyPolicy, pairs: &[TokenizedPair], beta: f64) -> Vec<f64> {
    deltas(p, reference, pairs).into_iter().map(|d| beta * d).collect()
}

/// Mean sigmoid preference loss and its exact gradient with respect to `p`.
pub fn dpo_loss_and_grad(
    p: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[TokenizedPair],
    cfg: &DpoConfig,
) -> Result<(f64, PolicyGrad), TrainerError> {
    cfg.validate()?;
    let v = p.vocab().len() as TokenId;
    for x in pairs {
        if let Some(bad) = x.prompt.iter().chain(&x.chosen).chain(&x.rejected).find(|&&t| t >= v) {
            return Err(PolicyError::OutOfVocabulary(format!("token id {bad}")).into());
        }
    }
    let mut grad = PolicyGrad::zeros_like(p);
    if pairs.is_empty() {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    for (x, d) in pairs.iter().zip(deltas(p, reference, pairs)) {
        let z = cfg.beta * d;
        loss += neg_log_sigmoid(z) * inv;
        // d(-log sigmoid(z))/d delta = -beta * sigmoid(-z)
        let coef = -cfg.beta * sigmoid(-z) * inv;
        accumulate_seq_grad(p, &mut grad, &x.prompt, &x.chosen, coef);
        accumulate_seq_grad(p, &mut grad, &x.prompt, &x.rejected, -coef);
    }
    if !loss.is_finite() || !grad.is_finite() {
        return Err(TrainerError::NonFiniteLoss(format!("dpo loss {loss}")));
    }
    Ok((loss, grad))
}

/// `cfg.steps` full-batch gradient steps; returns the policy and the loss
/// before each step.
pub fn dpo_train(
    p: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[TokenizedPair],
    cfg: &DpoConfig,
) -> Result<(ToyPolicy, Vec<f64>), TrainerError> {
    let mut next = p.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let (loss, grad) = dpo_loss_and_grad(&next, reference, pairs, cfg)?;
        losses.push(loss);
        next.apply(&grad, cfg.step_size);
    }
    Ok((next, losses))
}
