//! Prompt templates with named `{placeholder}` slots.
//!
//! Recognised placeholders: `{context}`, `{prompt}`, `{reference}`,
//! `{history}`, `{backtrack}`, `{backtrack_index}`, `{chain}`, `{answer}`,
//! `{record_id}`.
//! Every template starts with a `task:` line so that mocks can tell requests
//! apart.

use std::path::Path;

use super::Strategy;

const SYSTEM: &str = "You are a radiology assistant. Think before answering and always reply in the form \
<think>reasoning</think><answer>report</answer>.";

const INIT: &str = "task: init
id: {record_id}
context: {context}
prompt: {prompt}
reference: {reference}
Examine the film step by step, then write the report.";

const EXPLORE: &str = "task: explore
id: {record_id}
context: {context}
prompt: {prompt}
history:
{history}
Explore a new reasoning pathway that differs from every prior path above, then write the report.";

const BACKTRACK: &str = "task: backtrack
id: {record_id}
context: {context}
prompt: {prompt}
history:
{history}
revisit step {backtrack_index}:
{backtrack}
Return to the revisited step and continue reasoning from there instead of the latest path.";

const VERIFY: &str = "task: verify
id: {record_id}
context: {context}
prompt: {prompt}
history:
{history}
Check the latest reasoning and report for errors, then state the verified report.";

const CORRECT: &str = "task: correct
id: {record_id}
context: {context}
prompt: {prompt}
history:
{history}
Critique the latest report, point out its flaws and write a corrected report.";

const REFORMAT: &str = "task: reformat
id: {record_id}
context: {context}
prompt: {prompt}
history:
{history}
Rewrite the successful reasoning as one coherent chain in the order a radiologist would follow, keeping the final report.";

const FILTER: &str = "task: filter
id: {record_id}
context: {context}
chain: {chain}
answer: {answer}
reference: {reference}
Does the reasoning and answer agree with the reference report? Reply with exactly one verdict token: CONSISTENT or INCONSISTENT.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: String,
    pub init: String,
    pub explore: String,
    pub backtrack: String,
    pub verify: String,
    pub correct: String,
    pub reformat: String,
    pub filter: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: SYSTEM.into(),
            init: INIT.into(),
            explore: EXPLORE.into(),
            backtrack: BACKTRACK.into(),
            verify: VERIFY.into(),
            correct: CORRECT.into(),
            reformat: REFORMAT.into(),
            filter: FILTER.into(),
        }
    }
}

impl PromptTemplates {
    pub const FILE_NAMES: [&'static str; 8] = [
        "system", "init", "explore", "backtrack", "verify", "correct", "reformat", "filter",
    ];

    /// Reads `<name>.txt` files from `dir`; missing files keep the default.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        for name in Self::FILE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)?;
                *t.slot_mut(name) = text.trim_end().to_string();
            }
        }
        Ok(t)
    }

    fn slot_mut(&mut self, name: &str) -> &mut String {
        match name {
            "system" => &mut self.system,
            "init" => &mut self.init,
            "explore" => &mut self.explore,
            "backtrack" => &mut self.backtrack,
            "verify" => &mut self.verify,
            "correct" => &mut self.correct,
            "reformat" => &mut self.reformat,
            "filter" => &mut self.filter,
            _ => unreachable!("unknown template slot {name}"),
        }
    }

    pub fn for_strategy(&self, s: Strategy) -> &str {
        match s {
            Strategy::Explore => &self.explore,
            Strategy::Backtrack => &self.backtrack,
            Strategy::Verify => &self.verify,
            Strategy::Correct => &self.correct,
        }
    }
}

/// Replaces each `{key}` with its value. Unknown placeholders are left alone.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start + 1..];
        match tail.find('}') {
            Some(end) => {
                let key = &tail[..end];
                match values.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &tail[end + 1..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_replaces_known_keys_once() {
        let s = fill("a {x} b {y} {x} {z}", &[("x", "1"), ("y", "{x}")]);
        assert_eq!(s, "a 1 b {x} 1 {z}");
        assert_eq!(fill("open { brace", &[]), "open { brace");
    }

    #[test]
    fn defaults_carry_task_lines_and_placeholders() {
        let t = PromptTemplates::default();
        for (tmpl, task) in [
            (&t.init, "init"),
            (&t.explore, "explore"),
            (&t.backtrack, "backtrack"),
            (&t.verify, "verify"),
            (&t.correct, "correct"),
            (&t.reformat, "reformat"),
            (&t.filter, "filter"),
        ] {
            assert!(tmpl.starts_with(&format!("task: {task}\n")));
            assert!(tmpl.contains("{context}"));
        }
        assert!(t.init.contains("{reference}"));
        assert!(t.explore.contains("{history}") && t.explore.contains("differs from every prior path"));
        assert!(t.filter.contains("CONSISTENT or INCONSISTENT"));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("explore.txt"), "task: explore\n{history}\n").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.explore, "task: explore\n{history}");
        assert_eq!(t.init, PromptTemplates::default().init);
    }
}
