//! Strict `<think>…</think><answer>…</answer>` parsing.

use thiserror::Error;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

const TAGS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedOutput {
    pub think: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed tagged output: {0}")]
pub struct Malformed(pub &'static str);

fn contains_tag(s: &str) -> bool {
    TAGS.iter().any(|t| s.contains(t))
}

/// Accepts exactly one think span followed by exactly one answer span, with
/// nothing but whitespace around them.
pub fn parse_tagged_output(text: &str) -> Result<TaggedOutput, Malformed> {
    let rest = text
        .trim_start()
        .strip_prefix(THINK_OPEN)
        .ok_or(Malformed("expected leading <think>"))?;
    let close = rest.find(THINK_CLOSE).ok_or(Malformed("missing </think>"))?;
    let think = &rest[..close];
    if contains_tag(think) {
        return Err(Malformed("tag inside think span"));
    }
    let rest = rest[close + THINK_CLOSE.len()..]
        .trim_start()
        .strip_prefix(ANSWER_OPEN)
        .ok_or(Malformed("expected <answer> after think span"))?;
    let close = rest.find(ANSWER_CLOSE).ok_or(Malformed("missing </answer>"))?;
    let answer = &rest[..close];
    if contains_tag(answer) {
        return Err(Malformed("tag inside answer span"));
    }
    if !rest[close + ANSWER_CLOSE.len()..].trim().is_empty() {
        return Err(Malformed("trailing content after answer span"));
    }
    Ok(TaggedOutput {
        think: think.to_owned(),
        answer: answer.to_owned(),
    })
}

/// Inverse of [`parse_tagged_output`] for spans free of tag literals.
pub fn compose_tagged(think: &str, answer: &str) -> String {
    format!("{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{answer}{ANSWER_CLOSE}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ok(t: &str, a: &str) -> Result<TaggedOutput, Malformed> {
        Ok(TaggedOutput {
            think: t.into(),
            answer: a.into(),
        })
    }

    #[test]
    fn canonical() {
        assert_eq!(parse_tagged_output("<think>x</think><answer>y</answer>"), ok("x", "y"));
        assert_eq!(
            parse_tagged_output("  <think> x </think>\n <answer>y</answer>\n"),
            ok(" x ", "y")
        );
        assert_eq!(parse_tagged_output("<think></think><answer></answer>"), ok("", ""));
    }

    #[test]
    fn malformed_cases() {
        for bad in [
            "<answer>y</answer><think>x</think>",
            "<think>x</think>",
            "<answer>y</answer>",
            "y",
            "",
            "<think>a</think><answer>b</answer><answer>c</answer>",
            "<think>a</think><think>a</think><answer>b</answer>",
            "<think>a<answer>b</think></answer>",
            "<think>a</think><answer>b</answer> tail",
            "lead <think>a</think><answer>b</answer>",
            "<think>a</think> mid <answer>b</answer>",
            "<think>a<think></think><answer>b</answer>",
        ] {
            assert!(parse_tagged_output(bad).is_err(), "{bad:?} should be malformed");
        }
    }

    proptest! {
        #[test]
        fn compose_then_parse_roundtrips(think in "[a-z .<>/]{0,30}", answer in "[a-z .<>/]{0,30}") {
            prop_assume!(!contains_tag(&think) && !contains_tag(&answer));
            let composed = compose_tagged(&think, &answer);
            prop_assert_eq!(parse_tagged_output(&composed), ok(&think, &answer));
        }
    }
}
