//! Self-cognition correction: measure how often a policy denies hearing
//! audio, then reduce it by self-distillation followed by preference
//! optimization against denial responses.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::MgrdError;
use crate::curation::build_preference_pairs;
use crate::format::{parse_lenient, standardize, FormatConfig};
use crate::judges::{Judge, Verdict};
use crate::policy::{Generator, PolicyGenerator, SftExample, ToyPolicy};
use crate::rewards::verify_answer;
use crate::seeds::{derive_seed, rng};
use crate::trainer::{dpo_train, pair_tokens, DpoConfig};
use crate::types::{ConfigError, Dataset, Matcher, ReasoningOutput, Sample};

/// The `[cognition]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CognitionConfig {
    /// Share of prompts held out for measuring the error rate.
    pub holdout_frac: f64,
    pub window: usize,
    /// SFT steps fitting the base policy to the (partly wrong) corpus.
    pub base_steps: usize,
    /// Candidates per training prompt, for distillation and for pairs.
    pub k: usize,
    pub distill_steps: usize,
    pub step_size: f64,
    pub n_pairs: usize,
    /// Samples per held-out prompt when measuring the error rate.
    pub eval_samples: usize,
    pub temperature: f64,
    pub max_len: usize,
}

impl Default for CognitionConfig {
    fn default() -> Self {
        Self {
            holdout_frac: 0.2,
            window: 4,
            base_steps: 1500,
            k: 4,
            distill_steps: 20,
            step_size: 1.0,
            n_pairs: 400,
            eval_samples: 8,
            temperature: 1.0,
            max_len: 16,
        }
    }
}

impl CognitionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.holdout_frac > 0.0 && self.holdout_frac < 1.0) {
            return Err(ConfigError::new(format!("cognition.holdout_frac {} outside (0, 1)", self.holdout_frac)));
        }
        if self.window == 0 || self.k == 0 || self.eval_samples == 0 || self.max_len == 0 {
            return Err(ConfigError::new("cognition.window, k, eval_samples and max_len must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.temperature > 0.0) {
            return Err(ConfigError::new("cognition.step_size and temperature must be positive"));
        }
        Ok(())
    }
}

/// Seeded split into (train, held-out); the held-out part has
/// `round(frac * n)` items, at least one when the corpus is non-empty.
pub fn split_holdout(corpus: &Dataset<Sample>, frac: f64, seed: u64) -> (Dataset<Sample>, Dataset<Sample>) {
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut rng(seed));
    let n_held = ((frac * corpus.len() as f64).round() as usize).clamp(usize::from(!corpus.is_empty()), corpus.len());
    let (held, train) = idx.split_at(n_held);
    let pick = |ix: &[usize], name: &str| {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        let mut d = Dataset::new(format!("{}_{name}", corpus.name), ix.iter().map(|&i| corpus.samples[i].clone()).collect());
        d.provenance = corpus.provenance.clone();
        d.set_provenance("split", name);
        d.set_provenance("split_seed", seed);
        d
    };
    (pick(train, "train"), pick(held, "heldout"))
}

/// Denials among judged generations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCount {
    pub denials: usize,
    pub judged: usize,
}

impl ErrorCount {
    pub fn rate(&self) -> f64 {
        if self.judged == 0 {
            0.0
        } else {
            self.denials as f64 / self.judged as f64
        }
    }
}

/// One row of the correction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitionRow {
    pub stage: String,
    pub errors: ErrorCount,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CognitionReport {
    pub rows: Vec<CognitionRow>,
}

impl CognitionReport {
    pub fn rate(&self, stage: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.stage == stage).map(|r| r.errors.rate())
    }

    /// Error rates strictly decrease down the table.
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].errors.rate() < w[0].errors.rate())
    }
}

impl fmt::Display for CognitionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<36} {:>10} {:>9}", "stage", "error", "denials")?;
        for r in &self.rows {
            writeln!(f, "{:<36} {:>9.2}% {:>4}/{}", r.stage, 100.0 * r.errors.rate(), r.errors.denials, r.errors.judged)?;
        }
        Ok(())
    }
}

pub const STAGE_BASE: &str = "Base model";
pub const STAGE_DISTILL: &str = "Iterative Self-Distillation";
pub const STAGE_DPO: &str = "Iterative Self-Distillation + DPO";

#[derive(Debug, Clone, PartialEq)]
pub struct CognitionOutcome {
    pub report: CognitionReport,
    pub base: ToyPolicy,
    pub distilled: ToyPolicy,
    pub corrected: ToyPolicy,
    pub pairs: usize,
}

fn sample_judged(
    p: &ToyPolicy,
    prompts: &[Sample],
    n: usize,
    judge: &dyn Judge,
    cfg: &CognitionConfig,
    fmt: &FormatConfig,
    seed: u64,
) -> Result<Judged, MgrdError> {
    let gen = PolicyGenerator { policy: p, max_len: cfg.max_len };
    let mut outs = Vec::with_capacity(prompts.len() * n);
    for (i, s) in prompts.iter().enumerate() {
        for raw in gen.generate(s, n, cfg.temperature, derive_seed(seed, &[i as u64]))? {
            outs.push((s.clone(), parse_lenient(&raw, fmt).output));
        }
    }
    let verdicts = judge.judge_all(&outs).into_iter().map(Result::ok).collect();
    Ok((outs, verdicts))
}

/// Held-out denial rate of `p` under `judge`.
pub fn measure_errors(
    p: &ToyPolicy,
    heldout: &Dataset<Sample>,
    judge: &dyn Judge,
    cfg: &CognitionConfig,
    fmt: &FormatConfig,
    seed: u64,
) -> Result<ErrorCount, MgrdError> {
    let (_, verdicts) = sample_judged(p, &heldout.samples, cfg.eval_samples, judge, cfg, fmt, seed)?;
    let judged: Vec<&Verdict> = verdicts.iter().flatten().collect();
    Ok(ErrorCount { denials: judged.iter().filter(|v| !v.cognition_ok).count(), judged: judged.len() })
}

/// SFT a fresh policy on the corpus as given, denials included.
pub fn fit_base(train: &Dataset<Sample>, vocab: &crate::policy::Vocabulary, cfg: &CognitionConfig, fmt: &FormatConfig, seed: u64) -> Result<ToyPolicy, MgrdError> {
    let batch = sft_batch(vocab, &train.samples, fmt)?;
    let mut p = ToyPolicy::new(vocab.clone(), cfg.window)?;
    p.seed = seed;
    p.sft_train(&batch, cfg.base_steps, cfg.step_size)?;
    Ok(p)
}

fn sft_batch(vocab: &crate::policy::Vocabulary, items: &[Sample], fmt: &FormatConfig) -> Result<Vec<SftExample>, MgrdError> {
    items
        .iter()
        .map(|s| {
            let target = standardize(s, fmt).map_err(|e| ConfigError::new(e.to_string()))?;
            Ok(SftExample::from_text(vocab, &s.question, &target)?)
        })
        .collect()
}

/// Candidates paired with their verdicts (`None` when the judge failed).
type Judged = (Vec<(Sample, ReasoningOutput)>, Vec<Option<Verdict>>);

/// Base measurement, self-distillation on cognition-correct answers, then
/// DPO against denials with the distilled policy as the frozen reference.
/// An empty corpus yields an empty report.
#[allow(clippy::too_many_arguments)]
pub fn run_cognition_correction(
    base: &ToyPolicy,
    train: &Dataset<Sample>,
    heldout: &Dataset<Sample>,
    judge: &dyn Judge,
    cfg: &CognitionConfig,
    dpo: &DpoConfig,
    fmt: &FormatConfig,
    seed: u64,
) -> Result<CognitionOutcome, MgrdError> {
    cfg.validate()?;
    dpo.validate()?;
    if train.is_empty() || heldout.is_empty() {
        return Ok(CognitionOutcome {
            report: CognitionReport::default(),
            base: base.clone(),
            distilled: base.clone(),
            corrected: base.clone(),
            pairs: 0,
        });
    }
    let eval_seed = derive_seed(seed, &[0]);
    let mut report = CognitionReport::default();
    report.rows.push(CognitionRow { stage: STAGE_BASE.into(), errors: measure_errors(base, heldout, judge, cfg, fmt, eval_seed)? });

    // self-distillation: keep cognition-correct, answer-correct samples
    let (outs, verdicts) = sample_judged(base, &train.samples, cfg.k, judge, cfg, fmt, derive_seed(seed, &[1]))?;
    let mut kept = Vec::new();
    for (i, ((s, out), v)) in outs.iter().zip(&verdicts).enumerate() {
        let Some(v) = v else { continue };
        if v.cognition_ok && verify_answer(&out.response, &s.answer_truth, Matcher::Normalized)? == 1 {
            kept.push(Sample {
                id: format!("{}/c{i}", s.id),
                native_think: Some(out.think.clone()),
                response_truth: Some(out.response.clone()),
                ..s.clone()
            });
        }
    }
    let mut distilled = base.clone();
    if !kept.is_empty() {
        distilled.sft_train(&sft_batch(base.vocab(), &kept, fmt)?, cfg.distill_steps, cfg.step_size)?;
    }
    report.rows.push(CognitionRow { stage: STAGE_DISTILL.into(), errors: measure_errors(&distilled, heldout, judge, cfg, fmt, eval_seed)? });

    // preference optimization on fresh samples from the distilled policy
    let (outs, verdicts) = sample_judged(&distilled, &train.samples, cfg.k, judge, cfg, fmt, derive_seed(seed, &[2]))?;
    let pairs = build_preference_pairs(&outs, &verdicts, cfg.n_pairs)?;
    let tokenized = pair_tokens(&distilled, &pairs.samples, fmt)?;
    let corrected = if tokenized.is_empty() { distilled.clone() } else { dpo_train(&distilled, &distilled, &tokenized, dpo)?.0 };
    report.rows.push(CognitionRow { stage: STAGE_DPO.into(), errors: measure_errors(&corrected, heldout, judge, cfg, fmt, eval_seed)? });

    Ok(CognitionOutcome { report, base: base.clone(), distilled, corrected, pairs: tokenized.len() })
}
