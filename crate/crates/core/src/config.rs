//! TOML pipeline configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::format::FormatConfig;
use crate::judges::{FallbackJudge, Judge, Lexicons, RemoteJudge, RuleJudge};
use crate::mgrd::{CognitionConfig, CollapseConfig, CorpusConfig, LoopConfig, LoopParams, ThinkBudgetTask};
use crate::trainer::{DpoConfig, PpoConfig};
use crate::types::{ConfigError, CurationConfig, RewardSpec};

/// Overrides `judge.endpoint` (and selects the remote judge) when set.
pub const JUDGE_ENDPOINT_ENV: &str = "MGRD_JUDGE_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    #[default]
    Rule,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub kind: JudgeKind,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub attempts: u32,
    pub max_in_flight: usize,
    /// Judge with the rule judge when the remote one fails.
    pub fallback_to_rule: bool,
    /// Lexicon file for the rule judge; bundled lists when unset.
    pub lexicons: Option<PathBuf>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            kind: JudgeKind::Rule,
            endpoint: None,
            timeout_ms: 10_000,
            attempts: 3,
            max_in_flight: 8,
            fallback_to_rule: false,
            lexicons: None,
        }
    }
}

impl JudgeConfig {
    pub fn build(&self) -> Result<Box<dyn Judge + Sync>, ConfigError> {
        let rule = || -> Result<RuleJudge, ConfigError> {
            let lex = match &self.lexicons {
                Some(p) => Lexicons::load(p)?,
                None => Lexicons::default(),
            };
            Ok(RuleJudge::new(lex))
        };
        match self.kind {
            JudgeKind::Rule => Ok(Box::new(rule()?)),
            JudgeKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| ConfigError::new(format!("judge.kind = \"remote\" needs judge.endpoint or {JUDGE_ENDPOINT_ENV}")))?;
                if self.timeout_ms == 0 {
                    return Err(ConfigError::new("judge.timeout_ms must be positive"));
                }
                let remote = RemoteJudge::new(endpoint, Duration::from_millis(self.timeout_ms))
                    .with_attempts(self.attempts)
                    .with_max_in_flight(self.max_in_flight);
                let fallback = if self.fallback_to_rule { Some(rule()?) } else { None };
                Ok(Box::new(FallbackJudge { remote, fallback }))
            }
        }
    }
}

/// The `[ablation]` section; the micro-task and collapse test sit in
/// `[ablation.task]` and `[ablation.collapse]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub iterations: usize,
    pub task: ThinkBudgetTask,
    pub collapse: CollapseConfig,
    pub ppo: PpoConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { iterations: 500, task: ThinkBudgetTask::default(), collapse: CollapseConfig::default(), ppo: PpoConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub run_dir: Option<PathBuf>,
    pub format: FormatConfig,
    pub reward: RewardSpec,
    pub curation: CurationConfig,
    pub ppo: PpoConfig,
    pub dpo: DpoConfig,
    #[serde(rename = "loop")]
    pub loop_params: LoopParams,
    pub judge: JudgeConfig,
    pub corpus: CorpusConfig,
    pub ablation: AblationConfig,
    pub cognition: CognitionConfig,
}

fn section_key(t: &toml::Table, section: &str, key: &str) -> Option<i64> {
    t.get(section)?.as_table()?.get(key)?.as_integer()
}

impl PipelineConfig {
    /// Parse and validate. `loop.K` and `curation.distill_samples_K` name the
    /// same quantity: giving one sets both, giving both with different values
    /// is an error.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::new(e.to_string()))?;
        let loop_k = section_key(&table, "loop", "K");
        let cur_k = section_key(&table, "curation", "distill_samples_K");
        let mut cfg: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::new(e.to_string()))?;
        match (loop_k, cur_k) {
            (Some(a), Some(b)) if a != b => {
                return Err(ConfigError::new(format!("loop.K = {a} conflicts with curation.distill_samples_K = {b}")));
            }
            (None, Some(_)) => cfg.loop_params.k = cfg.curation.distill_samples_k,
            _ => cfg.curation.distill_samples_k = cfg.loop_params.k,
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Apply environment overrides (currently the judge endpoint).
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var(k).ok());
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(ep) = get(JUDGE_ENDPOINT_ENV).filter(|s| !s.trim().is_empty()) {
            self.judge.endpoint = Some(ep);
            self.judge.kind = JudgeKind::Remote;
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            params: self.loop_params.clone(),
            format: self.format.clone(),
            reward_spec: self.reward,
            ppo: self.ppo,
            dpo: self.dpo.clone(),
            curation: self.curation,
            cognition: self.cognition.clone(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.loop_config().validate()?;
        if self.loop_params.k != self.curation.distill_samples_k {
            return Err(ConfigError::new("loop.K must equal curation.distill_samples_K"));
        }
        self.ablation.ppo.validate()?;
        if self.ablation.collapse.window == 0 {
            return Err(ConfigError::new("ablation.collapse.window must be >= 1"));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}
