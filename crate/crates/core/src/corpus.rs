//! Seeded synthetic corpora over the toy vocabulary: copy and arithmetic
//! QA, perception prompts with grounded or surrogate reference chains, and
//! self-cognition prompts with count-exact denial injection.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::policy::Vocabulary;
use crate::seeds::rng;
use crate::types::{Dataset, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    CopyTask,
    ArithmeticTask,
    PerceptionTask,
    CognitionTask,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::CopyTask => "copy_task",
            TaskKind::ArithmeticTask => "arithmetic_task",
            TaskKind::PerceptionTask => "perception_task",
            TaskKind::CognitionTask => "cognition_task",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [TaskKind::CopyTask, TaskKind::ArithmeticTask, TaskKind::PerceptionTask, TaskKind::CognitionTask]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CorpusError::InvalidSpec(format!("unknown task kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: TaskKind,
    pub size: usize,
    pub error_injection_rate: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: TaskKind, size: usize, seed: u64) -> Self {
        Self { kind, size, error_injection_rate: 0.0, seed }
    }

    pub fn with_error_rate(mut self, rate: f64) -> Self {
        self.error_injection_rate = rate;
        self
    }

    /// Number of injected items: the rate times the size, rounded.
    pub fn injected_count(&self) -> usize {
        (self.error_injection_rate * self.size as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("vocabulary cannot express {kind}: missing {missing:?}")]
    UnsupportedKind { kind: &'static str, missing: String },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
}

pub const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
pub const MOODS: [&str; 4] = ["sad", "happy", "calm", "tense"];
/// Prompt cue standing in for the clip's audible character, per mood.
pub const MOOD_CUES: [&str; 4] = ["low", "high", "slow", "fast"];
pub const SOUNDS: [&str; 4] = ["dog", "bell", "rain", "wind"];

/// Grounded reference chain for a mood: names acoustic properties only.
pub fn grounded_chain(mood: &str) -> &'static str {
    match mood {
        "sad" => "minor key . falling pitch .",
        "happy" => "major key . rising pitch .",
        "calm" => "slow tempo . soft timbre .",
        _ => "fast tempo . sharp timbre .",
    }
}

/// Surrogate chain: argues from caption and lyrics instead of the sound.
pub fn surrogate_chain(mood: &str) -> String {
    format!("caption says {mood} . lyrics say {mood} .")
}

pub const COGNITION_GOOD_THINK: &str = "i hear";
pub const DENIAL_THINK: &str = "i am a text model .";
pub const DENIAL_RESPONSE: &str = "i cannot hear";

pub fn cognition_question(sound: &str) -> String {
    format!("what sound ? {sound}")
}

pub fn cognition_good_think(sound: &str) -> String {
    format!("{COGNITION_GOOD_THINK} {sound} .")
}

fn perception_question(mood_idx: usize) -> String {
    format!("{} mood ?", MOOD_CUES[mood_idx])
}

/// Vocabulary covering the arithmetic, perception and cognition tasks.
pub fn world_vocabulary() -> Vocabulary {
    let mut words: Vec<&str> = DIGITS.to_vec();
    words.extend(["+", "=", ".", "?", "mood"]);
    words.extend(MOOD_CUES);
    words.extend(MOODS);
    words.extend(["minor", "major", "key", "falling", "rising", "pitch", "tempo", "soft", "sharp", "timbre"]);
    words.extend(["caption", "says", "lyrics", "say"]);
    words.extend(["what", "sound", "i", "hear", "am", "a", "text", "model", "cannot"]);
    words.extend(SOUNDS);
    Vocabulary::new(words).expect("world vocabulary is well formed")
}

/// Specials plus `n` copyable symbols `s0..s{n-1}`.
pub fn copy_vocabulary(n: usize) -> Vocabulary {
    Vocabulary::new((0..n).map(|i| format!("s{i}"))).expect("copy vocabulary is well formed")
}

fn require(vocab: &Vocabulary, kind: TaskKind, texts: &[&str]) -> Result<(), CorpusError> {
    for t in texts {
        if let Err(e) = vocab.tokenize(t) {
            return Err(CorpusError::UnsupportedKind { kind: kind.name(), missing: e.to_string() });
        }
    }
    Ok(())
}

fn injected_set(spec: &GeneratorSpec, r: &mut impl Rng) -> Vec<bool> {
    let mut flags = vec![false; spec.size];
    for i in index::sample(r, spec.size, spec.injected_count()) {
        flags[i] = true;
    }
    flags
}

/// Build the corpus described by `spec`.
pub fn generate(spec: &GeneratorSpec, vocab: &Vocabulary) -> Result<Dataset<Sample>, CorpusError> {
    if spec.size == 0 {
        return Err(CorpusError::InvalidSpec("size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.error_injection_rate) {
        return Err(CorpusError::InvalidSpec(format!("error_injection_rate {} outside [0, 1]", spec.error_injection_rate)));
    }
    let injects = matches!(spec.kind, TaskKind::PerceptionTask | TaskKind::CognitionTask);
    if !injects && spec.error_injection_rate != 0.0 {
        return Err(CorpusError::InvalidSpec(format!("{} takes no error injection", spec.kind.name())));
    }
    let mut r = rng(spec.seed);
    let kind = spec.kind;
    let id = |i: usize| format!("{}-{i:05}", kind.name());
    let samples: Vec<Sample> = match kind {
        TaskKind::CopyTask => {
            let symbols: Vec<&str> = vocab.tokens()[3..].iter().map(String::as_str).collect();
            if symbols.is_empty() {
                return Err(CorpusError::UnsupportedKind { kind: kind.name(), missing: "any non-special token".into() });
            }
            (0..spec.size)
                .map(|i| {
                    let x = *symbols.choose(&mut r).expect("non-empty");
                    Sample::text(id(i), x, x).with_response(x).with_tag("copy")
                })
                .collect()
        }
        TaskKind::ArithmeticTask => {
            require(vocab, kind, &DIGITS)?;
            require(vocab, kind, &["+ ="])?;
            (0..spec.size)
                .map(|i| {
                    let a = r.gen_range(0..10usize);
                    let b = r.gen_range(0..10 - a);
                    let c = a + b;
                    Sample::text(id(i), format!("{a} + {b}"), c.to_string())
                        .with_think(format!("{a} + {b} = {c}"))
                        .with_response(c.to_string())
                        .with_tag("arithmetic")
                })
                .collect()
        }
        TaskKind::PerceptionTask => {
            for (m, mood) in MOODS.iter().enumerate() {
                require(vocab, kind, &[&perception_question(m), mood, grounded_chain(mood), &surrogate_chain(mood)])?;
            }
            let poisoned = injected_set(spec, &mut r);
            (0..spec.size)
                .map(|i| {
                    let m = r.gen_range(0..MOODS.len());
                    let mood = MOODS[m];
                    let (think, chain_tag) = if poisoned[i] {
                        (surrogate_chain(mood), "chain:surrogate")
                    } else {
                        (grounded_chain(mood).to_string(), "chain:grounded")
                    };
                    Sample::audio(id(i), format!("clip://{}", id(i)), perception_question(m), mood)
                        .with_think(think)
                        .with_response(mood)
                        .with_tag("perception")
                        .with_tag(format!("mood:{mood}"))
                        .with_tag(chain_tag)
                })
                .collect()
        }
        TaskKind::CognitionTask => {
            for s in SOUNDS {
                require(vocab, kind, &[&cognition_question(s), &cognition_good_think(s)])?;
            }
            require(vocab, kind, &[DENIAL_THINK, DENIAL_RESPONSE])?;
            let denied = injected_set(spec, &mut r);
            (0..spec.size)
                .map(|i| {
                    let s = *SOUNDS.choose(&mut r).expect("non-empty");
                    let base = Sample::audio(id(i), format!("clip://{}", id(i)), cognition_question(s), s).with_tag("cognition");
                    if denied[i] {
                        base.with_think(DENIAL_THINK).with_response(DENIAL_RESPONSE).with_tag("denial")
                    } else {
                        base.with_think(cognition_good_think(s)).with_response(s)
                    }
                })
                .collect()
        }
    };
    Ok(Dataset::new(kind.name(), samples)
        .with_provenance("kind", kind.name())
        .with_provenance("size", spec.size)
        .with_provenance("error_injection_rate", spec.error_injection_rate)
        .with_provenance("injected", if injects { spec.injected_count() } else { 0 })
        .with_provenance("seed", spec.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{parse, standardize, FormatConfig};
    use crate::judges::{rule_judge, Lexicons};
    use crate::jsonl::dataset_to_string;
    use crate::rewards::verify_answer;
    use crate::types::{validate_dataset, Matcher, ReasoningOutput};

    #[test]
    fn cognition_injection_is_count_exact() {
        let spec = GeneratorSpec::new(TaskKind::CognitionTask, 5000, 1).with_error_rate(0.0676);
        let d = generate(&spec, &world_vocabulary()).unwrap();
        assert_eq!(d.samples.iter().filter(|s| s.has_tag("denial")).count(), 338);
        let lex = Lexicons::default();
        let flagged = d
            .samples
            .iter()
            .filter(|s| {
                let out = ReasoningOutput::new(s.native_think.clone().unwrap(), s.response_truth.clone().unwrap());
                !rule_judge(s, &out, &lex).cognition_ok
            })
            .count();
        assert_eq!(flagged, 338);
    }

    #[test]
    fn copy_answers_verify_against_prompt() {
        let d = generate(&GeneratorSpec::new(TaskKind::CopyTask, 200, 4), &copy_vocabulary(5)).unwrap();
        for s in &d.samples {
            assert_eq!(verify_answer(&s.question, &s.answer_truth, Matcher::Exact), Ok(1));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let v = world_vocabulary();
        for kind in [TaskKind::CopyTask, TaskKind::ArithmeticTask, TaskKind::PerceptionTask, TaskKind::CognitionTask] {
            let rate = if matches!(kind, TaskKind::PerceptionTask | TaskKind::CognitionTask) { 0.3 } else { 0.0 };
            let spec = GeneratorSpec::new(kind, 300, 11).with_error_rate(rate);
            let a = dataset_to_string(&generate(&spec, &v).unwrap());
            assert_eq!(a, dataset_to_string(&generate(&spec, &v).unwrap()));
            let d = generate(&spec, &v).unwrap();
            assert!(validate_dataset(&d).is_empty(), "{kind:?}: {:?}", validate_dataset(&d));
            let fmt = FormatConfig::default();
            for s in &d.samples {
                let target = standardize(s, &fmt).unwrap();
                parse(&target, &fmt).unwrap();
                v.tokenize(&target).unwrap();
                v.tokenize(&s.question).unwrap();
            }
        }
    }

    #[test]
    fn arithmetic_is_single_digit_and_correct() {
        let d = generate(&GeneratorSpec::new(TaskKind::ArithmeticTask, 500, 2), &world_vocabulary()).unwrap();
        for s in &d.samples {
            let parts: Vec<usize> = s.question.split(" + ").map(|x| x.parse().unwrap()).collect();
            assert_eq!((parts[0] + parts[1]).to_string(), s.answer_truth);
            assert_eq!(s.answer_truth.len(), 1);
        }
    }

    #[test]
    fn perception_chains_are_judged_by_construction() {
        let lex = Lexicons::default();
        let s = Sample::audio("x", "clip://x", "q", "sad");
        for mood in MOODS {
            let g = rule_judge(&s, &ReasoningOutput::new(grounded_chain(mood), mood), &lex);
            assert!(g.grounding && g.coherence && g.cognition_ok, "{mood}: {}", g.rationale);
            let b = rule_judge(&s, &ReasoningOutput::new(surrogate_chain(mood), mood), &lex);
            assert!(!b.grounding, "{mood}");
        }
        let d = generate(&GeneratorSpec::new(TaskKind::PerceptionTask, 1000, 3).with_error_rate(0.25), &world_vocabulary()).unwrap();
        assert_eq!(d.samples.iter().filter(|s| s.has_tag("chain:surrogate")).count(), 250);
        for s in &d.samples {
            let out = ReasoningOutput::new(s.native_think.clone().unwrap(), s.response_truth.clone().unwrap());
            assert_eq!(rule_judge(s, &out, &lex).grounding, s.has_tag("chain:grounded"));
        }
    }

    #[test]
    fn unsupported_vocab_and_bad_specs() {
        let err = generate(&GeneratorSpec::new(TaskKind::ArithmeticTask, 5, 0), &copy_vocabulary(3));
        assert!(matches!(err, Err(CorpusError::UnsupportedKind { .. })));
        assert!(generate(&GeneratorSpec::new(TaskKind::CopyTask, 0, 0), &copy_vocabulary(3)).is_err());
        assert!(generate(&GeneratorSpec::new(TaskKind::CopyTask, 5, 0).with_error_rate(0.1), &copy_vocabulary(3)).is_err());
        assert_eq!("cognition_task".parse::<TaskKind>().unwrap(), TaskKind::CognitionTask);
    }
}
