//! Data curation: pass@k difficulty filtering, distilled-candidate
//! filtering, cold-start composition, preference pairs and RL mixes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::format::{parse_lenient, standardize, FormatConfig, FormatError};
use crate::judges::Verdict;
use crate::policy::{GenerationError, Generator};
use crate::rewards::{matcher_for, verify_answer, RewardError};
use crate::seeds::{derive_seed, rng};
use crate::types::{
    ConfigError, CurationConfig, Dataset, FormattedSample, Modality, PreferencePair, ReasoningOutput, RewardSpec, Sample,
};

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{candidates} candidates but {verdicts} verdicts")]
    VerdictMismatch { candidates: usize, verdicts: usize },
    #[error("need {needed} CoT samples, only {available} available")]
    InsufficientCoT { needed: usize, available: usize },
    #[error("{pool} pool has {available} samples, {requested} requested")]
    PoolTooSmall { pool: &'static str, available: usize, requested: usize },
}

/// Pass count over `k` sampled generations, with the generations cached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassStats {
    pub sample_id: String,
    pub k: usize,
    pub correct: usize,
    pub generations: Vec<ReasoningOutput>,
}

impl PassStats {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.correct > self.k {
            v.push(format!("{}: correct {} > k {}", self.sample_id, self.correct, self.k));
        }
        if self.generations.len() != self.k {
            v.push(format!("{}: {} generations for k {}", self.sample_id, self.generations.len(), self.k));
        }
        v
    }
}

pub fn estimate_pass_at_k<G: Generator + ?Sized>(
    s: &Sample,
    gen: &G,
    cfg: &CurationConfig,
    spec: &RewardSpec,
    fmt: &FormatConfig,
    seed: u64,
) -> Result<PassStats, CurationError> {
    cfg.validate()?;
    let raw = gen.generate(s, cfg.k, cfg.temperature, seed)?;
    if raw.len() < cfg.k {
        return Err(GenerationError::GenerationFailure { sample_id: s.id.clone(), wanted: cfg.k, got: raw.len() }.into());
    }
    let matcher = matcher_for(s, spec);
    let mut correct = 0;
    let mut generations = Vec::with_capacity(cfg.k);
    for r in raw.iter().take(cfg.k) {
        let out = parse_lenient(r, fmt).output;
        correct += usize::from(verify_answer(&out.response, &s.answer_truth, matcher)?);
        generations.push(out);
    }
    Ok(PassStats { sample_id: s.id.clone(), k: cfg.k, correct, generations })
}

/// Pass@k for every sample, each with its own derived seed.
pub fn estimate_all<G: Generator + ?Sized>(
    samples: &[Sample],
    gen: &G,
    cfg: &CurationConfig,
    spec: &RewardSpec,
    fmt: &FormatConfig,
    seed: u64,
) -> Result<Vec<PassStats>, CurationError> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| estimate_pass_at_k(s, gen, cfg, spec, fmt, derive_seed(seed, &[i as u64])))
        .collect()
}

/// Keep samples whose pass count lies in `[keep_min, keep_max]`.
///
/// Samples without stats, or with stats for a different `k`, are skipped and
/// counted in the provenance.
pub fn select_rl_subset(pool: &[Sample], stats: &[PassStats], cfg: &CurationConfig) -> Dataset<Sample> {
    let by_id: BTreeMap<&str, &PassStats> = stats.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let (mut easy, mut hard, mut skipped) = (0usize, 0usize, 0usize);
    let mut kept = Vec::new();
    for s in pool {
        match by_id.get(s.id.as_str()) {
            Some(p) if p.k == cfg.k => {
                if p.correct > cfg.keep_max {
                    easy += 1;
                } else if p.correct < cfg.keep_min {
                    hard += 1;
                } else {
                    kept.push(s.clone());
                }
            }
            _ => skipped += 1,
        }
    }
    let n = kept.len();
    Dataset::new("rl_selected", kept)
        .with_provenance("k", cfg.k)
        .with_provenance("keep_min", cfg.keep_min)
        .with_provenance("keep_max", cfg.keep_max)
        .with_provenance("kept", n)
        .with_provenance("dropped_too_easy", easy)
        .with_provenance("dropped_too_hard", hard)
        .with_provenance("skipped", skipped)
}

/// Keep candidates that are grounded, coherent and (when a ground truth
/// exists) correct. Candidates without a verdict are dropped.
pub fn filter_distilled(
    candidates: &[(Sample, ReasoningOutput)],
    verdicts: &[Option<Verdict>],
    spec: &RewardSpec,
) -> Result<Dataset<Sample>, CurationError> {
    if candidates.len() != verdicts.len() {
        return Err(CurationError::VerdictMismatch { candidates: candidates.len(), verdicts: verdicts.len() });
    }
    let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
    let mut kept = Vec::new();
    for (i, ((s, out), v)) in candidates.iter().zip(verdicts).enumerate() {
        let reason = match v {
            None => Some("unjudged"),
            Some(v) if !v.grounding => Some("ungrounded"),
            Some(v) if !v.coherence => Some("incoherent"),
            Some(_) if !s.answer_truth.trim().is_empty()
                && verify_answer(&out.response, &s.answer_truth, matcher_for(s, spec))? == 0 =>
            {
                Some("wrong_answer")
            }
            Some(_) => None,
        };
        match reason {
            Some(r) => *reasons.entry(r).or_default() += 1,
            None => {
                let mut d = s.clone();
                d.id = format!("{}/c{i}", s.id);
                d.native_think = Some(out.think.clone());
                d.response_truth = Some(out.response.clone());
                kept.push(d);
            }
        }
    }
    let mut d = Dataset::new("audio_cot", kept).with_provenance("candidates", candidates.len());
    for (r, n) in reasons {
        d.set_provenance(format!("rejected_{r}"), n);
    }
    Ok(d)
}

/// Smallest number of CoT samples `c` with `c == round(share * (n_plain + c))`.
///
/// One always exists for `share < 1`: `c - round(share * (n_plain + c))`
/// starts at or below zero and grows in steps of 0 or 1.
pub fn cot_count(n_plain: usize, share: f64) -> Option<usize> {
    if share >= 1.0 {
        return (n_plain == 0).then_some(0);
    }
    let share = share.max(0.0);
    // any fixed point satisfies c <= (share * n + 0.5) / (1 - share)
    let bound = ((share * n_plain as f64 + 0.5) / (1.0 - share)).ceil() as usize + 1;
    (0..=bound).find(|&c| c == (share * (n_plain + c) as f64).round() as usize)
}

fn formatted(s: &Sample, cfg: &FormatConfig) -> Result<FormattedSample, FormatError> {
    Ok(FormattedSample { id: s.id.clone(), modality: s.modality, question: s.question.clone(), target: standardize(s, cfg)? })
}

/// Cold-start SFT corpus: every text and plain audio sample plus enough CoT
/// audio samples to make up `cot_share` of the audio portion.
pub fn compose_coldstart(
    text: &Dataset<Sample>,
    audio: &Dataset<Sample>,
    audio_cot: &Dataset<Sample>,
    cot_share: f64,
    cfg: &FormatConfig,
    seed: u64,
) -> Result<Dataset<FormattedSample>, CurationError> {
    if !(0.0..=1.0).contains(&cot_share) {
        return Err(ConfigError::new(format!("cot_share must lie in [0, 1], got {cot_share}")).into());
    }
    // share == 1 with plain audio present can never be met
    let needed = cot_count(audio.len(), cot_share)
        .ok_or(CurationError::InsufficientCoT { needed: usize::MAX, available: audio_cot.len() })?;
    if needed > audio_cot.len() {
        return Err(CurationError::InsufficientCoT { needed, available: audio_cot.len() });
    }
    let mut rng = rng(seed);
    let mut cot: Vec<&Sample> = audio_cot.samples.iter().collect();
    cot.shuffle(&mut rng);
    cot.truncate(needed);

    let mut out = Vec::with_capacity(text.len() + audio.len() + needed);
    for s in text.samples.iter().chain(&audio.samples) {
        // CoT-less items carry the empty-think prefix.
        let plain = Sample { native_think: None, ..s.clone() };
        out.push(formatted(&plain, cfg)?);
    }
    for s in cot {
        out.push(formatted(s, cfg)?);
    }
    out.shuffle(&mut rng);
    Ok(Dataset::new("coldstart", out)
        .with_provenance("seed", seed)
        .with_provenance("text", text.len())
        .with_provenance("audio_plain", audio.len())
        .with_provenance("audio_cot", needed)
        .with_provenance("cot_share", cot_share))
}

/// Pair cognition-correct with cognition-incorrect generations of the same
/// prompt, round-robin across prompts until `n_pairs` pairs exist.
pub fn build_preference_pairs(
    generations: &[(Sample, ReasoningOutput)],
    verdicts: &[Option<Verdict>],
    n_pairs: usize,
) -> Result<Dataset<PreferencePair>, CurationError> {
    if generations.len() != verdicts.len() {
        return Err(CurationError::VerdictMismatch { candidates: generations.len(), verdicts: verdicts.len() });
    }
    // prompt -> (positives, negatives), in first-seen order
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, (Vec<&ReasoningOutput>, Vec<&ReasoningOutput>)> = BTreeMap::new();
    for ((s, out), v) in generations.iter().zip(verdicts) {
        let Some(v) = v else { continue };
        let g = groups.entry(s.question.as_str()).or_insert_with(|| {
            order.push(s.question.as_str());
            (Vec::new(), Vec::new())
        });
        if v.cognition_ok {
            g.0.push(out);
        } else {
            g.1.push(out);
        }
    }
    let mut insufficient = 0usize;
    let mut queues: Vec<(&str, Vec<(&ReasoningOutput, &ReasoningOutput)>)> = Vec::new();
    for q in order {
        let (pos, neg) = &groups[q];
        let pairs: Vec<_> = pos
            .iter()
            .flat_map(|&p| neg.iter().map(move |&n| (p, n)))
            .filter(|(p, n)| p != n)
            .collect();
        if pairs.is_empty() {
            insufficient += 1;
        } else {
            queues.push((q, pairs));
        }
    }
    let mut out = Vec::new();
    let mut round = 0;
    while out.len() < n_pairs {
        let before = out.len();
        for (q, pairs) in &queues {
            if out.len() == n_pairs {
                break;
            }
            if let Some(&(c, r)) = pairs.get(round) {
                out.push(PreferencePair { prompt: q.to_string(), chosen: c.clone(), rejected: r.clone() });
            }
        }
        if out.len() == before {
            break;
        }
        round += 1;
    }
    let n = out.len();
    Ok(Dataset::new("preference_pairs", out)
        .with_provenance("requested", n_pairs)
        .with_provenance("pairs", n)
        .with_provenance("insufficient_contrast", insufficient))
}

/// Seeded draw without replacement of `n_text` text and `n_audio` audio samples.
pub fn compose_rl_mix(
    text_pool: &Dataset<Sample>,
    audio_pool: &Dataset<Sample>,
    n_text: usize,
    n_audio: usize,
    seed: u64,
) -> Result<Dataset<Sample>, CurationError> {
    for (pool, d, n) in [("text", text_pool, n_text), ("audio", audio_pool, n_audio)] {
        if d.len() < n {
            return Err(CurationError::PoolTooSmall { pool, available: d.len(), requested: n });
        }
    }
    let mut rng = rng(seed);
    let mut out: Vec<Sample> = text_pool.samples.choose_multiple(&mut rng, n_text).cloned().collect();
    out.extend(audio_pool.samples.choose_multiple(&mut rng, n_audio).cloned());
    Ok(Dataset::new("rl_mix", out)
        .with_provenance("seed", seed)
        .with_provenance("n_text", n_text)
        .with_provenance("n_audio", n_audio)
        .with_provenance("text_pool", text_pool.name.clone())
        .with_provenance("audio_pool", audio_pool.name.clone()))
}

/// Samples carrying every tag in `tags`, optionally restricted to a modality.
pub fn select_by_tags(pool: &Dataset<Sample>, tags: &[&str], modality: Option<Modality>) -> Dataset<Sample> {
    let kept = pool
        .samples
        .iter()
        .filter(|s| modality.is_none_or(|m| s.modality == m) && tags.iter().all(|t| s.has_tag(t)))
        .cloned()
        .collect();
    Dataset::new(format!("{}[{}]", pool.name, tags.join(",")), kept).with_provenance("source", pool.name.clone())
}
