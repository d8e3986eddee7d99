//! The `<think>` reasoning format: grammar, parser, emitter and the
//! standardizer that gives CoT-less samples an empty think block.
//!
//! A well-formed generation is
//!
//! ```text
//! <think>{think}</think>{separator}{response}
//! ```
//!
//! starting at byte 0, with exactly one open and one close tag and a
//! non-blank response.

use serde::{Deserialize, Serialize};

use crate::types::{ConfigError, ReasoningOutput, Sample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormatConfig {
    pub open_tag: String,
    pub close_tag: String,
    /// Body used for samples without native reasoning.
    pub empty_body: String,
    /// Text between the close tag and the response.
    pub separator: String,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self {
            open_tag: "<think>".into(),
            close_tag: "</think>".into(),
            empty_body: "\n\n".into(),
            separator: "\n".into(),
        }
    }
}

impl FormatConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.open_tag.is_empty() || self.close_tag.is_empty() {
            return Err(ConfigError::new("format tags must be non-empty"));
        }
        if self.open_tag == self.close_tag {
            return Err(ConfigError::new("open_tag and close_tag must differ"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("malformed reasoning format: {0}")]
    MalformedFormat(&'static str),
    #[error("sample {0} has no response_truth")]
    MissingResponse(String),
}

/// Parse a generation into its think span and response.
pub fn parse(raw: &str, cfg: &FormatConfig) -> Result<ReasoningOutput, FormatError> {
    use FormatError::MalformedFormat;

    let Some(after_open) = raw.strip_prefix(cfg.open_tag.as_str()) else {
        return Err(if raw.contains(&cfg.open_tag) {
            MalformedFormat("text before open tag")
        } else {
            MalformedFormat("missing open tag")
        });
    };
    let Some(close_at) = after_open.find(&cfg.close_tag) else {
        return Err(MalformedFormat("missing close tag"));
    };
    let think = &after_open[..close_at];
    let rest = &after_open[close_at + cfg.close_tag.len()..];
    if think.contains(&cfg.open_tag) || rest.contains(&cfg.open_tag) {
        return Err(MalformedFormat("duplicate open tag"));
    }
    if rest.contains(&cfg.close_tag) {
        return Err(MalformedFormat("duplicate close tag"));
    }
    let response = rest.strip_prefix(cfg.separator.as_str()).unwrap_or(rest);
    if response.trim().is_empty() {
        return Err(MalformedFormat("empty response"));
    }
    Ok(ReasoningOutput::new(think, response))
}

/// Result of [`parse_lenient`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub output: ReasoningOutput,
    pub well_formed: bool,
}

/// Parse, falling back to "no reasoning, whole string is the response" on
/// malformed input. Rewards use this so broken format never earns the
/// format term.
pub fn parse_lenient(raw: &str, cfg: &FormatConfig) -> Parsed {
    match parse(raw, cfg) {
        Ok(output) => Parsed { output, well_formed: true },
        Err(_) => Parsed { output: ReasoningOutput::new("", raw), well_formed: false },
    }
}

pub fn emit(out: &ReasoningOutput, cfg: &FormatConfig) -> String {
    let mut s = String::with_capacity(
        cfg.open_tag.len() + out.think.len() + cfg.close_tag.len() + cfg.separator.len() + out.response.len(),
    );
    s.push_str(&cfg.open_tag);
    s.push_str(&out.think);
    s.push_str(&cfg.close_tag);
    s.push_str(&cfg.separator);
    s.push_str(&out.response);
    s
}

/// Render a sample as a training target, prepending an empty think block
/// when the sample has no native reasoning.
pub fn standardize(s: &Sample, cfg: &FormatConfig) -> Result<String, FormatError> {
    let response = s
        .response_truth
        .as_deref()
        .ok_or_else(|| FormatError::MissingResponse(s.id.clone()))?;
    let think = s.native_think.as_deref().unwrap_or(&cfg.empty_body);
    Ok(emit(&ReasoningOutput::new(think, response), cfg))
}

/// True iff the think span holds at least one non-whitespace character.
pub fn reasoning_present(out: &ReasoningOutput) -> bool {
    out.think.chars().any(|c| !c.is_whitespace())
}

/// Whitespace-delimited units in the think span.
pub fn think_token_count(out: &ReasoningOutput) -> usize {
    out.think.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> FormatConfig {
        FormatConfig::default()
    }

    #[test]
    fn parses_canonical_empty_think() {
        let out = parse("<think>\n\n</think>\nHello", &cfg()).unwrap();
        assert_eq!(out, ReasoningOutput::new("\n\n", "Hello"));
        assert!(!reasoning_present(&out));
    }

    #[test]
    fn parses_simple_reasoning() {
        let out = parse("<think>minor key</think>\nB", &cfg()).unwrap();
        assert_eq!(out, ReasoningOutput::new("minor key", "B"));
    }

    #[test]
    fn rejects_malformed() {
        for raw in [
            "Hello",
            " <think>x</think>\ny",
            "<think>x\ny",
            "<think>x</think>\ny</think>",
            "<think><think>x</think>\ny",
            "<think>x</think>\n<think>y",
            "</think>x<think>\ny",
            "<think>x</think>\n  ",
        ] {
            assert!(
                matches!(parse(raw, &cfg()), Err(FormatError::MalformedFormat(_))),
                "accepted {raw:?}"
            );
        }
    }

    #[test]
    fn emit_template() {
        assert_eq!(emit(&ReasoningOutput::new("\n\n", "Hi"), &cfg()), "<think>\n\n</think>\nHi");
        assert_eq!(emit(&ReasoningOutput::new("x", "y"), &cfg()), "<think>x</think>\ny");
    }

    #[test]
    fn standardize_prepends_empty_think() {
        let s = Sample::text("s", "capital of France?", "Paris").with_response("Paris");
        assert_eq!(standardize(&s, &cfg()).unwrap(), "<think>\n\n</think>\nParis");
        let s = s.with_think("r").with_response("response");
        assert_eq!(standardize(&s, &cfg()).unwrap(), "<think>r</think>\nresponse");
        let bare = Sample::text("s9", "q", "a");
        assert_eq!(standardize(&bare, &cfg()), Err(FormatError::MissingResponse("s9".into())));
    }

    #[test]
    fn presence_and_counts() {
        assert!(!reasoning_present(&ReasoningOutput::new("", "a")));
        assert!(!reasoning_present(&ReasoningOutput::new("\n\n", "a")));
        assert!(reasoning_present(&ReasoningOutput::new("the key is minor", "a")));
        assert_eq!(think_token_count(&ReasoningOutput::new("\n\n", "a")), 0);
        assert_eq!(think_token_count(&ReasoningOutput::new("a b  c", "a")), 3);
    }

    #[test]
    fn lenient_fallback_uses_whole_string() {
        let p = parse_lenient("42", &cfg());
        assert!(!p.well_formed);
        assert_eq!(p.output, ReasoningOutput::new("", "42"));
    }

    #[test]
    fn custom_tags() {
        let c = FormatConfig {
            open_tag: "[r]".into(),
            close_tag: "[/r]".into(),
            ..FormatConfig::default()
        };
        let o = ReasoningOutput::new("x y", "z");
        assert_eq!(parse(&emit(&o, &c), &c).unwrap(), o);
        assert!(FormatConfig { close_tag: "[r]".into(), ..c.clone() }.validate().is_err());
    }

    /// Independent word counter: a state machine over chars.
    fn reference_word_count(s: &str) -> usize {
        let mut n = 0;
        let mut in_word = false;
        for c in s.chars() {
            if c.is_whitespace() {
                in_word = false;
            } else if !in_word {
                in_word = true;
                n += 1;
            }
        }
        n
    }

    #[test]
    fn corpus_mean_matches_reference_counter() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let alphabet = ['a', 'b', ' ', '\n', '\t', 'é', ' '];
        let mut ours = 0usize;
        let mut theirs = 0usize;
        for _ in 0..100 {
            let len = rng.gen_range(0..40);
            let s: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
            let out = ReasoningOutput::new(s.clone(), "r");
            ours += think_token_count(&out);
            theirs += reference_word_count(&s);
        }
        assert_eq!(ours as f64 / 100.0, theirs as f64 / 100.0);
    }

    fn no_tags() -> impl Strategy<Value = String> {
        "[a-z <>/\n.]{0,24}".prop_filter("no tags", |s| !s.contains("<think>") && !s.contains("</think>"))
    }

    proptest! {
        #[test]
        fn round_trip(think in no_tags(), response in no_tags()) {
            prop_assume!(!response.trim().is_empty());
            let o = ReasoningOutput::new(think, response);
            prop_assert_eq!(parse(&emit(&o, &cfg()), &cfg()).unwrap(), o);
        }

        #[test]
        fn standardized_cotless_has_no_reasoning(resp in "[a-zA-Z0-9 ]{1,20}") {
            prop_assume!(!resp.trim().is_empty());
            let s = Sample::text("x", "q", "a").with_response(resp);
            let out = parse(&standardize(&s, &cfg()).unwrap(), &cfg()).unwrap();
            prop_assert!(!reasoning_present(&out));
        }

        #[test]
        fn count_ignores_surrounding_whitespace(body in "[a-z ]{0,20}", pre in "[ \n\t]{0,4}", post in "[ \n\t]{0,4}") {
            let a = ReasoningOutput::new(body.clone(), "r");
            let b = ReasoningOutput::new(format!("{pre}{body}{post}"), "r");
            prop_assert_eq!(think_token_count(&a), think_token_count(&b));
        }

        #[test]
        fn two_open_tags_always_error(a in "[a-z]{0,5}", b in "[a-z]{0,5}") {
            let raw = format!("<think>{a}<think>{b}</think>\nr");
            prop_assert!(parse(&raw, &cfg()).is_err());
        }
    }
}
