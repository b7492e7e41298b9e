//! Rule-driven mock backend read from JSONL.
//!
//! Each line is `{"match": <ordinal or substring>, "reply": "..."}`. An integer
//! `match` fires on that 1-based call number of a connection; a string fires
//! when it occurs in the last user message (the empty string matches
//! everything). Rules are tried in file order and the first hit wins. A rule
//! may carry `"fail": true` to inject a transport error instead of replying.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, BackendFactory, ChatBackend, Message, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Match {
    Ordinal(u64),
    Substring(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub matcher: Match,
    #[serde(default)]
    pub reply: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fail: bool,
}

impl ScriptRule {
    pub fn reply(matcher: Match, reply: impl Into<String>) -> Self {
        Self {
            matcher,
            reply: reply.into(),
            fail: false,
        }
    }

    pub fn fail(matcher: Match) -> Self {
        Self {
            matcher,
            reply: String::new(),
            fail: true,
        }
    }

    fn hits(&self, call: u64, last_user: &str) -> bool {
        match &self.matcher {
            Match::Ordinal(n) => *n == call,
            Match::Substring(s) => last_user.contains(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    rules: Arc<Vec<ScriptRule>>,
}

impl Script {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules: Arc::new(rules) }
    }

    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(line)
                .map_err(|e| BackendError::Config(format!("script line {}: {e}", i + 1)))?;
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }
}

/// One connection over a [`Script`]; the call counter starts at zero.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Script,
    calls: u64,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self { script, calls: 0 }
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&mut self, messages: &[Message]) -> Result<String, BackendError> {
        self.calls += 1;
        let last_user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str());
        match self.script.rules.iter().find(|r| r.hits(self.calls, last_user)) {
            Some(r) if r.fail => Err(BackendError::Transport(format!("scripted failure on call {}", self.calls))),
            Some(r) => Ok(r.reply.clone()),
            None => Err(BackendError::Decode(format!("no scripted rule for call {}", self.calls))),
        }
    }
}

impl BackendFactory for Script {
    fn connect(&self) -> Result<Box<dyn ChatBackend>, BackendError> {
        Ok(Box::new(ScriptedBackend::new(self.clone())))
    }
}
