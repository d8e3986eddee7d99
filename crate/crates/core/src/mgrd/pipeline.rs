use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MgrdError;
use crate::corpus::{generate, world_vocabulary, GeneratorSpec, TaskKind};
use crate::curation::{compose_coldstart, compose_rl_mix, filter_distilled};
use crate::format::{parse_lenient, standardize, FormatConfig};
use crate::judges::{Judge, Verdict};
use crate::jsonl::{write_dataset, write_records};
use crate::policy::{Generator, PolicyError, PolicyGenerator, SftExample, ToyPolicy, Vocabulary};
use crate::report::write_metrics_csv;
use crate::rewards::{matcher_for, verify_answer, AuditRecord};
use crate::seeds::derive_seed;
use crate::trainer::{rlvr_train_with, Control, DpoConfig, PpoConfig, Rollout};
use crate::types::{
    ConfigError, CurationConfig, Dataset, FormattedSample, IterationState, ReasoningOutput, RewardSpec, Sample,
    TrainingMetrics,
};

use super::cognition::CognitionConfig;

/// Scalar loop knobs (the `[loop]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopParams {
    /// Number of distillation iterations.
    #[serde(rename = "T")]
    pub iterations: usize,
    /// Candidates sampled per perception prompt.
    #[serde(rename = "K")]
    pub k: usize,
    pub cot_share: f64,
    pub window: usize,
    pub coldstart_steps: usize,
    pub sft_steps: usize,
    pub sft_step_size: f64,
    pub rl_iterations: usize,
    pub rl_text: usize,
    pub rl_audio: usize,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            iterations: 2,
            k: 8,
            cot_share: 0.1,
            window: 4,
            coldstart_steps: 600,
            sft_steps: 40,
            sft_step_size: 1.0,
            rl_iterations: 10,
            rl_text: 16,
            rl_audio: 24,
        }
    }
}

/// Sizes of the synthetic pools (the `[corpus]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub text_size: usize,
    pub perception_size: usize,
    /// Share of perception reference chains that argue from text surrogates.
    pub surrogate_rate: f64,
    pub cognition_size: usize,
    pub cognition_error_rate: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { text_size: 60, perception_size: 200, surrogate_rate: 0.3, cognition_size: 1000, cognition_error_rate: 0.0676 }
    }
}

/// Everything the loop and its side experiments read.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoopConfig {
    pub params: LoopParams,
    pub format: FormatConfig,
    pub reward_spec: RewardSpec,
    pub ppo: PpoConfig,
    pub dpo: DpoConfig,
    pub curation: CurationConfig,
    pub cognition: CognitionConfig,
    pub seed: u64,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.params.iterations == 0 || self.params.k == 0 {
            return Err(ConfigError::new("loop.T and loop.K must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.params.cot_share) {
            return Err(ConfigError::new(format!("loop.cot_share {} outside [0, 1]", self.params.cot_share)));
        }
        if self.params.window == 0 {
            return Err(ConfigError::new("loop.window must be >= 1"));
        }
        self.format.validate()?;
        self.reward_spec.validate()?;
        self.ppo.validate()?;
        self.dpo.validate()?;
        self.curation.validate()?;
        self.cognition.validate()
    }
}

/// Persistence for policy checkpoints, addressed by string references.
pub trait CheckpointStore {
    fn save(&mut self, key: &str, p: &ToyPolicy) -> Result<String, MgrdError>;
    fn load(&self, reference: &str) -> Result<ToyPolicy, MgrdError>;
}

/// In-memory store for tests and dry runs.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    pub checkpoints: BTreeMap<String, ToyPolicy>,
}

impl CheckpointStore for MemoryStore {
    fn save(&mut self, key: &str, p: &ToyPolicy) -> Result<String, MgrdError> {
        self.checkpoints.insert(key.to_string(), p.clone());
        Ok(key.to_string())
    }

    fn load(&self, reference: &str) -> Result<ToyPolicy, MgrdError> {
        self.checkpoints
            .get(reference)
            .cloned()
            .ok_or_else(|| PolicyError::InvalidArgument(format!("no checkpoint {reference:?}")).into())
    }
}

/// Checkpoints as JSON files under a run directory; references are paths
/// relative to that directory.
#[derive(Debug, Clone)]
pub struct DirStore {
    pub root: PathBuf,
}

impl CheckpointStore for DirStore {
    fn save(&mut self, key: &str, p: &ToyPolicy) -> Result<String, MgrdError> {
        let rel = format!("{key}.ckpt.json");
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(PolicyError::Io)?;
        }
        p.save(&path)?;
        Ok(rel)
    }

    fn load(&self, reference: &str) -> Result<ToyPolicy, MgrdError> {
        Ok(ToyPolicy::load(&self.root.join(reference))?)
    }
}

/// Input corpora of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Pools {
    pub vocab: Vocabulary,
    /// Verifiable text tasks with native reasoning (joint-SFT task data).
    pub text: Dataset<Sample>,
    /// Audio items used without reasoning in the cold start.
    pub audio: Dataset<Sample>,
    /// Audio items with reference chains, grounded or surrogate.
    pub audio_cot: Dataset<Sample>,
    /// Perception-grounded prompts for self-distillation.
    pub perception: Dataset<Sample>,
}

impl Pools {
    /// Deterministic synthetic pools over the world vocabulary.
    pub fn synthetic(cfg: &CorpusConfig, seed: u64) -> Result<Self, MgrdError> {
        let vocab = world_vocabulary();
        let corpus = |spec: GeneratorSpec| generate(&spec, &vocab).map_err(|e| ConfigError::new(e.to_string()));
        let text = corpus(GeneratorSpec::new(TaskKind::ArithmeticTask, cfg.text_size.max(1), derive_seed(seed, &[1])))?;
        let perception = corpus(
            GeneratorSpec::new(TaskKind::PerceptionTask, cfg.perception_size.max(2), derive_seed(seed, &[2]))
                .with_error_rate(cfg.surrogate_rate),
        )?;
        let half = perception.len() / 2;
        let plain: Vec<Sample> =
            perception.samples[..half].iter().map(|s| Sample { native_think: None, ..s.clone() }).collect();
        let cot = perception.samples[half..].to_vec();
        Ok(Self {
            text,
            audio: Dataset::new("audio_plain", plain).with_provenance("source", "perception_task"),
            audio_cot: Dataset::new("audio_cot_seed", cot).with_provenance("source", "perception_task"),
            perception,
            vocab,
        })
    }
}

fn sft_examples<'a>(vocab: &Vocabulary, items: impl IntoIterator<Item = &'a Sample>, fmt: &FormatConfig) -> Result<Vec<SftExample>, MgrdError> {
    items
        .into_iter()
        .map(|s| {
            let target = standardize(s, fmt).map_err(|e| ConfigError::new(e.to_string()))?;
            Ok(SftExample::from_text(vocab, &s.question, &target)?)
        })
        .collect()
}

/// Cold-start SFT on the composed corpus.
pub fn coldstart(pools: &Pools, cfg: &LoopConfig) -> Result<(ToyPolicy, Dataset<FormattedSample>), MgrdError> {
    let composed = compose_coldstart(&pools.text, &pools.audio, &pools.audio_cot, cfg.params.cot_share, &cfg.format, derive_seed(cfg.seed, &[0, 0]))?;
    let batch = composed
        .samples
        .iter()
        .map(|f| SftExample::from_text(&pools.vocab, &f.question, &f.target))
        .collect::<Result<Vec<_>, _>>()?;
    let mut p = ToyPolicy::new(pools.vocab.clone(), cfg.params.window)?;
    p.seed = cfg.seed;
    p.sft_train(&batch, cfg.params.coldstart_steps, cfg.params.sft_step_size)?;
    Ok((p, composed))
}

/// One line of the filter audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterAuditLine {
    pub t: usize,
    pub candidate_id: String,
    pub sample_id: String,
    pub judged: bool,
    pub grounding: bool,
    pub coherence: bool,
    pub cognition_ok: bool,
    pub acc_part: u8,
    pub retained: bool,
    pub rationale: String,
}

/// One line of the reward audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardAuditLine {
    pub t: usize,
    pub rl_iteration: usize,
    #[serde(flatten)]
    pub record: AuditRecord,
}

/// Per-iteration summary written to `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub t: usize,
    pub checkpoint: String,
    pub candidates: usize,
    pub distilled: usize,
    pub rl_prompts: usize,
    pub mean_reward: f64,
    pub think_tokens: f64,
    pub clip_fraction: f64,
    pub think_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutput {
    pub state: IterationState,
    pub rl_selected: Dataset<Sample>,
    pub rl_metrics: TrainingMetrics,
    pub filter_audit: Vec<FilterAuditLine>,
    pub reward_audit: Vec<RewardAuditLine>,
    pub summary: IterationSummary,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Distill, filter, joint SFT, then RL; returns the state after iteration
/// `state.t + 1`.
pub fn run_iteration(
    state: &IterationState,
    store: &mut dyn CheckpointStore,
    pools: &Pools,
    judge: &dyn Judge,
    cfg: &LoopConfig,
) -> Result<IterationOutput, MgrdError> {
    let t = state.t + 1;
    let tt = t as u64;
    let prev = store.load(&state.checkpoint_ref)?;

    // 1. self-distillation: K candidates per perception prompt
    let gen = PolicyGenerator { policy: &prev, max_len: cfg.ppo.max_seq_tokens };
    let mut candidates: Vec<(Sample, ReasoningOutput)> = Vec::new();
    for (i, s) in pools.perception.samples.iter().enumerate() {
        let raws = gen.generate(s, cfg.params.k, cfg.curation.temperature, derive_seed(cfg.seed, &[tt, 1, i as u64]))?;
        candidates.extend(raws.iter().map(|r| (s.clone(), parse_lenient(r, &cfg.format).output)));
    }

    // 2. judge and filter
    let verdicts: Vec<Option<Verdict>> = judge.judge_all(&candidates).into_iter().map(Result::ok).collect();
    let mut distilled = filter_distilled(&candidates, &verdicts, &cfg.reward_spec)?;
    distilled.name = format!("audio_cot_t{t}");
    distilled.set_provenance("iteration", t);
    distilled.set_provenance("source_checkpoint", &state.checkpoint_ref);
    let kept: BTreeSet<&str> = distilled.samples.iter().map(|s| s.id.as_str()).collect();
    let mut filter_audit = Vec::with_capacity(candidates.len());
    for (i, ((s, out), v)) in candidates.iter().zip(&verdicts).enumerate() {
        let candidate_id = format!("{}/c{i}", s.id);
        let acc = verify_answer(&out.response, &s.answer_truth, matcher_for(s, &cfg.reward_spec))?;
        filter_audit.push(FilterAuditLine {
            t,
            retained: kept.contains(candidate_id.as_str()),
            candidate_id,
            sample_id: s.id.clone(),
            judged: v.is_some(),
            grounding: v.as_ref().is_some_and(|v| v.grounding),
            coherence: v.as_ref().is_some_and(|v| v.coherence),
            cognition_ok: v.as_ref().is_some_and(|v| v.cognition_ok),
            acc_part: acc,
            rationale: v.as_ref().map_or_else(|| "unjudged".to_string(), |v| v.rationale.clone()),
        });
    }
    if distilled.is_empty() {
        let histogram = distilled
            .provenance
            .iter()
            .filter(|(k, _)| k.starts_with("rejected_"))
            .map(|(k, v)| format!("{}={v}", &k["rejected_".len()..]))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(MgrdError::EmptyDistilledSet { iteration: t, histogram });
    }

    // 3. joint SFT on distilled chains plus the task data
    let mut policy = prev;
    let batch = sft_examples(&pools.vocab, distilled.samples.iter().chain(&pools.text.samples), &cfg.format)?;
    policy.sft_train(&batch, cfg.params.sft_steps, cfg.params.sft_step_size)?;

    // 4. RL on a mixed text/audio draw
    let rl_selected = compose_rl_mix(
        &pools.text,
        &pools.perception,
        cfg.params.rl_text.min(pools.text.len()),
        cfg.params.rl_audio.min(pools.perception.len()),
        derive_seed(cfg.seed, &[tt, 3]),
    )?;
    let mut reward_audit = Vec::new();
    let rollout = Rollout { fmt: cfg.format.clone(), budget: None };
    let (policy, rl_metrics) = rlvr_train_with(
        &policy,
        &rl_selected,
        &cfg.reward_spec,
        &cfg.ppo,
        cfg.params.rl_iterations,
        derive_seed(cfg.seed, &[tt, 4]),
        &rollout,
        |r| {
            reward_audit.extend(r.generations.iter().map(|g| RewardAuditLine {
                t,
                rl_iteration: r.iteration,
                record: AuditRecord::new(g.sample_id.clone(), &g.reward),
            }));
            Control::Continue
        },
    )?;
    let checkpoint = store.save(&format!("iter_{t}/policy"), &policy)?;

    let summary = IterationSummary {
        t,
        checkpoint: checkpoint.clone(),
        candidates: candidates.len(),
        distilled: distilled.len(),
        rl_prompts: rl_selected.len(),
        mean_reward: mean(&rl_metrics.mean_reward),
        think_tokens: mean(&rl_metrics.think_tokens),
        clip_fraction: mean(&rl_metrics.clip_fraction),
        think_fraction: mean(&rl_metrics.think_fraction),
    };
    let mut metrics = state.metrics.clone();
    metrics.push(summary.mean_reward, summary.think_tokens, summary.clip_fraction, summary.think_fraction);
    Ok(IterationOutput {
        state: IterationState { t, checkpoint_ref: checkpoint, distilled, metrics },
        rl_selected,
        rl_metrics,
        filter_audit,
        reward_audit,
        summary,
    })
}

/// Result of a full loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub final_state: IterationState,
    pub summaries: Vec<IterationSummary>,
    /// RL series concatenated across iterations.
    pub rl_metrics: TrainingMetrics,
}

fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), MgrdError> {
    Ok(write_records(path, items)?)
}

/// Cold start followed by `T` iterations. With `run_dir`, every dataset,
/// checkpoint, metrics series and audit log is written there.
pub fn run_loop(
    pools: &Pools,
    judge: &dyn Judge,
    cfg: &LoopConfig,
    store: &mut dyn CheckpointStore,
    run_dir: Option<&Path>,
) -> Result<LoopOutcome, MgrdError> {
    cfg.validate()?;
    let (start, composed) = coldstart(pools, cfg)?;
    let checkpoint_ref = store.save("coldstart", &start)?;
    if let Some(dir) = run_dir {
        write_dataset(&dir.join("coldstart.jsonl"), &composed)?;
    }
    let mut state = IterationState { t: 0, checkpoint_ref, distilled: Dataset::new("audio_cot_t0", vec![]), metrics: TrainingMetrics::default() };
    let mut summaries = Vec::new();
    let mut rl_metrics = TrainingMetrics::default();
    let (mut filter_log, mut reward_log) = (Vec::new(), Vec::new());
    let mut outcome = Ok(());
    for _ in 0..cfg.params.iterations {
        match run_iteration(&state, store, pools, judge, cfg) {
            Ok(out) => {
                if let Some(dir) = run_dir {
                    let it_dir = dir.join(format!("iter_{}", out.state.t));
                    std::fs::create_dir_all(&it_dir).map_err(PolicyError::Io)?;
                    write_dataset(&it_dir.join("distilled.jsonl"), &out.state.distilled)?;
                    write_dataset(&it_dir.join("rl_selected.jsonl"), &out.rl_selected)?;
                }
                filter_log.extend(out.filter_audit);
                reward_log.extend(out.reward_audit);
                rl_metrics.extend(&out.rl_metrics);
                summaries.push(out.summary);
                state = out.state;
            }
            Err(e) => {
                outcome = Err(e);
                break;
            }
        }
    }
    if let Some(dir) = run_dir {
        write_json_lines(&dir.join("filter_audit.jsonl"), &filter_log)?;
        write_json_lines(&dir.join("reward_audit.jsonl"), &reward_log)?;
        write_json_lines(&dir.join("metrics.jsonl"), &summaries)?;
        write_metrics_csv(&dir.join("metrics.csv"), &rl_metrics)?;
    }
    outcome?;
    Ok(LoopOutcome { final_state: state, summaries, rl_metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judges::{JudgeError, RuleJudge};

    fn small() -> (Pools, LoopConfig) {
        let corpus = CorpusConfig { text_size: 20, perception_size: 24, ..Default::default() };
        let mut cfg = LoopConfig { seed: 5, ..Default::default() };
        cfg.params.k = 4;
        cfg.params.rl_iterations = 2;
        cfg.params.rl_text = 4;
        cfg.params.rl_audio = 4;
        cfg.params.cot_share = 0.3;
        cfg.ppo.samples_per_prompt = 4;
        cfg.ppo.max_seq_tokens = 24;
        (Pools::synthetic(&corpus, 5).unwrap(), cfg)
    }

    #[test]
    fn two_iteration_smoke() {
        let (pools, cfg) = small();
        let mut store = MemoryStore::default();
        let out = run_loop(&pools, &RuleJudge::default(), &cfg, &mut store, None).unwrap();
        assert_eq!(out.final_state.t, 2);
        assert_eq!(out.final_state.metrics.len(), 2);
        assert!(out.summaries.iter().all(|s| s.distilled > 0));
        assert_eq!(out.final_state.distilled.provenance["iteration"], "2");
        assert_eq!(out.final_state.distilled.provenance["source_checkpoint"], "iter_1/policy");
        for s in &out.final_state.distilled.samples {
            assert_eq!(verify_answer(s.response_truth.as_deref().unwrap(), &s.answer_truth, cfg.reward_spec.matcher), Ok(1));
        }
    }

    struct RejectAll;

    impl Judge for RejectAll {
        fn judge(&self, _: &Sample, _: &ReasoningOutput) -> Result<Verdict, JudgeError> {
            Ok(Verdict { grounding: false, coherence: true, cognition_ok: true, rationale: "no".into() })
        }
    }

    #[test]
    fn rejecting_judge_aborts() {
        let (pools, cfg) = small();
        let err = run_loop(&pools, &RejectAll, &cfg, &mut MemoryStore::default(), None).unwrap_err();
        match err {
            MgrdError::EmptyDistilledSet { iteration, histogram } => {
                assert_eq!(iteration, 1);
                assert!(histogram.contains("ungrounded="), "{histogram}");
            }
            other => panic!("{other}"),
        }
    }
}
