//! Judgment of reasoning chains: acoustic grounding, logical coherence and
//! self-cognition.
//!
//! [`RuleJudge`] is a deterministic lexicon-based stand-in; [`RemoteJudge`]
//! speaks a small JSON-over-HTTP protocol to an external LLM judge.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::types::{ConfigError, Modality, ReasoningOutput, Sample};

const DEFAULT_LEXICONS: &str = include_str!("../assets/lexicons.txt");

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub grounding: bool,
    pub coherence: bool,
    pub cognition_ok: bool,
    pub rationale: String,
}

impl Verdict {
    pub fn all_pass(&self) -> bool {
        self.grounding && self.coherence && self.cognition_ok
    }
}

/// Term lists used by the rule judge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicons {
    pub acoustic_terms: BTreeSet<String>,
    pub surrogate_terms: BTreeSet<String>,
    pub denial_patterns: BTreeSet<String>,
    pub contradiction_markers: BTreeSet<String>,
}

impl Default for Lexicons {
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICONS).expect("bundled lexicons parse")
    }
}

impl Lexicons {
    /// Parse the sectioned plain-text format (`[acoustic]`, `[surrogate]`,
    /// `[denial]`, `[contradiction]`; `#` starts a comment line).
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut lex = Lexicons {
            acoustic_terms: BTreeSet::new(),
            surrogate_terms: BTreeSet::new(),
            denial_patterns: BTreeSet::new(),
            contradiction_markers: BTreeSet::new(),
        };
        let mut section: Option<&mut BTreeSet<String>> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(match name {
                    "acoustic" => &mut lex.acoustic_terms,
                    "surrogate" => &mut lex.surrogate_terms,
                    "denial" => &mut lex.denial_patterns,
                    "contradiction" => &mut lex.contradiction_markers,
                    other => return Err(ConfigError::new(format!("lexicons line {}: unknown section [{other}]", i + 1))),
                });
                continue;
            }
            match section.as_deref_mut() {
                Some(set) => {
                    set.insert(line.to_lowercase());
                }
                None => return Err(ConfigError::new(format!("lexicons line {}: term outside a section", i + 1))),
            }
        }
        lex.validate()?;
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let acoustic: BTreeSet<String> = self.acoustic_terms.iter().map(|t| canonical(t)).collect();
        if let Some(t) = self.surrogate_terms.iter().find(|t| acoustic.contains(&canonical(t))) {
            return Err(ConfigError::new(format!("term {t:?} is both acoustic and surrogate")));
        }
        Ok(())
    }
}

/// Lowercase, map every non-alphanumeric char to a space, collapse runs.
fn canonical(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Non-overlapping whole-word occurrences of `term` in `text`.
fn count_term(padded_text: &str, term: &str) -> usize {
    let t = canonical(term);
    if t.is_empty() {
        return 0;
    }
    padded_text.matches(&format!(" {t} ")).count()
}

fn padded(s: &str) -> String {
    format!(" {} ", canonical(s))
}

fn count_terms(padded_text: &str, terms: &BTreeSet<String>) -> usize {
    terms.iter().map(|t| count_term(padded_text, t)).sum()
}

/// Sentence units: segments between `.`, `!`, `?` or newlines that contain
/// at least one alphanumeric character.
pub fn sentence_units(s: &str) -> usize {
    s.split(['.', '!', '?', '\n']).filter(|seg| seg.chars().any(char::is_alphanumeric)).count()
}

/// Deterministic lexicon-based verdict.
pub fn rule_judge(_s: &Sample, out: &ReasoningOutput, lex: &Lexicons) -> Verdict {
    let think = padded(&out.think);
    let response = padded(&out.response);

    let acoustic = count_terms(&think, &lex.acoustic_terms);
    let surrogate = count_terms(&think, &lex.surrogate_terms);
    let grounding = acoustic >= 1 && acoustic >= surrogate;

    let sentences = sentence_units(&out.think);
    let contradiction = count_terms(&think, &lex.contradiction_markers) > 0;
    let coherence = sentences >= 2 && !contradiction;

    let denial = lex
        .denial_patterns
        .iter()
        .find(|p| count_term(&think, p) > 0 || count_term(&response, p) > 0);
    let cognition_ok = denial.is_none();

    let mut reasons = Vec::new();
    if !grounding {
        reasons.push(format!("not grounded: {acoustic} acoustic vs {surrogate} surrogate terms"));
    }
    if !coherence {
        if contradiction {
            reasons.push("incoherent: contradiction marker".to_string());
        } else {
            reasons.push(format!("incoherent: {sentences} sentence unit(s)"));
        }
    }
    if let Some(p) = denial {
        reasons.push(format!("self-cognition error: {p:?}"));
    }
    let rationale = if reasons.is_empty() { "all criteria met".to_string() } else { reasons.join("; ") };
    Verdict { grounding, coherence, cognition_ok, rationale }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JudgeError {
    #[error("judge request timed out")]
    JudgeTimeout,
    #[error("judge protocol error: {0}")]
    JudgeProtocolError(String),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
}

/// Anything that can judge a (sample, output) pair.
pub trait Judge {
    fn judge(&self, s: &Sample, out: &ReasoningOutput) -> Result<Verdict, JudgeError>;

    /// Judge a batch; results line up with `items`.
    fn judge_all(&self, items: &[(Sample, ReasoningOutput)]) -> Vec<Result<Verdict, JudgeError>> {
        items.iter().map(|(s, o)| self.judge(s, o)).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuleJudge {
    pub lexicons: Lexicons,
}

impl RuleJudge {
    pub fn new(lexicons: Lexicons) -> Self {
        Self { lexicons }
    }
}

impl Judge for RuleJudge {
    fn judge(&self, s: &Sample, out: &ReasoningOutput) -> Result<Verdict, JudgeError> {
        Ok(rule_judge(s, out, &self.lexicons))
    }
}

/// Wire request for the remote judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub id: String,
    pub question: String,
    pub think: String,
    pub response: String,
    pub modality: Modality,
}

impl JudgeRequest {
    pub fn new(s: &Sample, out: &ReasoningOutput) -> Self {
        Self {
            id: s.id.clone(),
            question: s.question.clone(),
            think: out.think.clone(),
            response: out.response.clone(),
            modality: s.modality,
        }
    }
}

pub fn encode_verdict(v: &Verdict) -> String {
    serde_json::to_string(v).expect("verdict serializes")
}

pub fn decode_verdict(body: &str) -> Result<Verdict, JudgeError> {
    let v: Verdict = serde_json::from_str(body).map_err(|e| JudgeError::JudgeProtocolError(e.to_string()))?;
    if !v.all_pass() && v.rationale.trim().is_empty() {
        return Err(JudgeError::JudgeProtocolError("empty rationale on a failing verdict".into()));
    }
    Ok(v)
}

/// HTTP client for an external judge: one POST per candidate.
#[derive(Debug, Clone)]
pub struct RemoteJudge {
    pub endpoint: String,
    pub timeout: Duration,
    /// Total attempts per candidate (first try included).
    pub max_attempts: u32,
    pub max_in_flight: usize,
    agent: ureq::Agent,
}

enum Attempt {
    Transient(String),
    Timeout,
    Fatal(JudgeError),
}

impl RemoteJudge {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.into(), timeout, max_attempts: 3, max_in_flight: 4, agent }
    }

    pub fn with_attempts(mut self, n: u32) -> Self {
        self.max_attempts = n.max(1);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    fn attempt(&self, body: &str) -> Result<Verdict, Attempt> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .send(body);
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Attempt::Timeout),
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut || e.kind() == std::io::ErrorKind::WouldBlock => {
                return Err(Attempt::Timeout)
            }
            Err(e) => return Err(Attempt::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let msg = format!("HTTP {status}");
            return Err(if status >= 500 { Attempt::Transient(msg) } else { Attempt::Fatal(JudgeError::JudgeUnavailable(msg)) });
        }
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Err(Attempt::Timeout),
            Err(e) => return Err(Attempt::Transient(e.to_string())),
        };
        decode_verdict(&text).map_err(Attempt::Fatal)
    }
}

impl Judge for RemoteJudge {
    fn judge(&self, s: &Sample, out: &ReasoningOutput) -> Result<Verdict, JudgeError> {
        let body = serde_json::to_string(&JudgeRequest::new(s, out)).expect("request serializes");
        let mut last = String::new();
        for _ in 0..self.max_attempts {
            match self.attempt(&body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Timeout) => last = "timeout".into(),
                Err(Attempt::Transient(m)) => last = m,
            }
        }
        if self.max_attempts == 1 && last == "timeout" {
            return Err(JudgeError::JudgeTimeout);
        }
        Err(JudgeError::JudgeUnavailable(format!("{} attempts failed, last: {last}", self.max_attempts)))
    }

    fn judge_all(&self, items: &[(Sample, ReasoningOutput)]) -> Vec<Result<Verdict, JudgeError>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.max_in_flight) {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk.iter().map(|(s, o)| scope.spawn(move || self.judge(s, o))).collect();
                out.extend(handles.into_iter().map(|h| h.join().expect("judge thread panicked")));
            });
        }
        out
    }
}

/// Remote judge with an optional rule-based fallback when the remote fails.
#[derive(Debug, Clone)]
pub struct FallbackJudge {
    pub remote: RemoteJudge,
    pub fallback: Option<RuleJudge>,
}

impl Judge for FallbackJudge {
    fn judge(&self, s: &Sample, out: &ReasoningOutput) -> Result<Verdict, JudgeError> {
        match (self.remote.judge(s, out), &self.fallback) {
            (Ok(v), _) => Ok(v),
            (Err(_), Some(rule)) => rule.judge(s, out),
            (Err(e), None) => Err(e),
        }
    }

    fn judge_all(&self, items: &[(Sample, ReasoningOutput)]) -> Vec<Result<Verdict, JudgeError>> {
        let remote = self.remote.judge_all(items);
        remote
            .into_iter()
            .zip(items)
            .map(|(r, (s, o))| match (r, &self.fallback) {
                (Ok(v), _) => Ok(v),
                (Err(_), Some(rule)) => rule.judge(s, o),
                (Err(e), None) => Err(e),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Sample {
        Sample::audio("a", "clip://a", "mood of this clip", "sad")
    }

    fn judge(think: &str, resp: &str) -> Verdict {
        rule_judge(&sample(), &ReasoningOutput::new(think, resp), &Lexicons::default())
    }

    #[test]
    fn acoustic_reasoning_is_grounded() {
        let v = judge("minor key progressions, descending contour", "sad");
        assert!(v.grounding);
        assert!(!v.coherence, "single sentence");
        let v = judge("Minor key progressions. Descending melodic contour.", "sad");
        assert!(v.grounding && v.coherence && v.cognition_ok);
        assert_eq!(v.rationale, "all criteria met");
    }

    #[test]
    fn surrogate_reasoning_is_not_grounded() {
        let v = judge("The lyrics mention sadness. The transcript says goodbye.", "sad");
        assert!(!v.grounding);
        assert!(!v.rationale.is_empty());
        // a single acoustic mention does not outweigh two surrogate ones
        let v = judge("lyrics are sad. caption says loss. pitch is low.", "sad");
        assert!(!v.grounding);
    }

    #[test]
    fn denial_is_caught_case_and_punctuation_insensitive() {
        let v = judge("", "I am a text model and cannot hear");
        assert!(!v.cognition_ok);
        assert!(!judge("", "I am a TEXT-MODEL!").cognition_ok);
        assert!(!judge("...Cannot, hear.", "ok").cognition_ok);
        assert!(judge("", "I hear rain").cognition_ok);
    }

    #[test]
    fn empty_think_fails_grounding_and_coherence() {
        let v = judge("", "sad");
        assert!(!v.grounding && !v.coherence);
    }

    #[test]
    fn contradiction_marker_breaks_coherence() {
        let v = judge("rising pitch. this contradicts the tempo.", "x");
        assert!(!v.coherence);
    }

    #[test]
    fn lexicon_parsing_and_disjointness() {
        let lex = Lexicons::parse("[acoustic]\npitch\n[surrogate]\nlyrics\n").unwrap();
        assert!(lex.acoustic_terms.contains("pitch"));
        assert!(Lexicons::parse("[acoustic]\npitch\n[surrogate]\nPitch\n").is_err());
        assert!(Lexicons::parse("pitch\n").is_err());
        assert!(Lexicons::parse("[sounds]\n").is_err());
    }

    #[test]
    fn protocol_decode() {
        let v = decode_verdict(r#"{"grounding":true,"coherence":true,"cognition_ok":true,"rationale":""}"#).unwrap();
        assert!(v.all_pass());
        assert!(matches!(
            decode_verdict(r#"{"grounding":true,"coherence":true,"rationale":"x"}"#),
            Err(JudgeError::JudgeProtocolError(_))
        ));
        assert!(matches!(decode_verdict("not json"), Err(JudgeError::JudgeProtocolError(_))));
    }

    proptest! {
        #[test]
        fn rule_judge_is_pure(think in "[a-z .]{0,40}", resp in "[a-z ]{0,20}") {
            prop_assert_eq!(judge(&think, &resp), judge(&think, &resp));
        }

        #[test]
        fn surrogate_only_never_grounded(idx in proptest::collection::vec(0usize..6, 0..8)) {
            let lex = Lexicons::default();
            let terms: Vec<&String> = lex.surrogate_terms.iter().collect();
            let think = idx.iter().map(|&i| terms[i % terms.len()].as_str()).collect::<Vec<_>>().join(". ");
            let v = rule_judge(&sample(), &ReasoningOutput::new(think, "x"), &lex);
            prop_assert!(!v.grounding);
        }

        #[test]
        fn verdict_protocol_round_trip(g: bool, c: bool, k: bool, r in "[a-z][a-z ]{0,11}") {
            let v = Verdict { grounding: g, coherence: c, cognition_ok: k, rationale: r };
            prop_assert_eq!(decode_verdict(&encode_verdict(&v)).unwrap(), v);
        }

        #[test]
        fn denial_case_invariant(upper in proptest::collection::vec(any::<bool>(), 11), punct in "[.,!?;]{0,3}") {
            let base = "cannot hear";
            let mixed: String = base.chars().zip(upper.iter().cycle()).map(|(ch, &u)| if u { ch.to_ascii_uppercase() } else { ch }).collect();
            let v = judge("", &format!("{punct}{mixed}{punct}"));
            prop_assert!(!v.cognition_ok);
        }
    }
}
