//! Deterministic stand-ins for the teacher and expert models, driven by the
//! synthetic grammar.
//!
//! Both read the structured `task:`/`context:` lines of the default prompt
//! templates. Replies are a pure function of the request text and a seed, so
//! collection over them is reproducible.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{BackendError, BackendFactory, ChatBackend, Message, Role};
use crate::corpus::{compose_tagged, parse_tagged_output, tokenize, GrammarSpec, TokenSequence, RESERVED};
use crate::metrics::DfStats;
use crate::policy::derive_seed;
use crate::rewards::{precision_reward, RewardConfig};

/// How noisy the synthetic teacher is. Error rates shrink by `decay` with
/// every earlier step in the attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherProfile {
    /// Chance of describing a different condition altogether.
    pub wrong_condition: f64,
    /// Per-token substitution/deletion rate.
    pub token_noise: f64,
    pub decay: f64,
    /// Per-token noise added while reformatting.
    pub reformat_noise: f64,
    /// Chance that the impression names a wrong condition in the final chain.
    pub chain_slip: f64,
}

impl Default for TeacherProfile {
    fn default() -> Self {
        Self {
            wrong_condition: 0.5,
            token_noise: 0.5,
            decay: 0.5,
            reformat_noise: 0.05,
            chain_slip: 0.1,
        }
    }
}

fn last_user(messages: &[Message]) -> Result<&str, BackendError> {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .ok_or_else(|| BackendError::Decode("no user message".into()))
}

fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(key)).map(str::trim)
}

fn parse_context(text: &str) -> Result<(u32, u32), BackendError> {
    let ctx = field(text, "context:").ok_or_else(|| BackendError::Decode("request has no context line".into()))?;
    let mut c = None;
    let mut n = None;
    for part in ctx.split_whitespace() {
        if let Some(v) = part.strip_prefix("condition=") {
            c = v.parse().ok();
        } else if let Some(v) = part.strip_prefix("noise=") {
            n = v.parse().ok();
        }
    }
    match (c, n) {
        (Some(c), Some(n)) => Ok((c, n)),
        _ => Err(BackendError::Decode(format!("unreadable context {ctx:?}"))),
    }
}

fn request_seed(seed: u64, text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    derive_seed(seed, &[u64::from_le_bytes(b)])
}

#[derive(Debug, Clone)]
pub struct SyntheticTeacher {
    grammar: Arc<GrammarSpec>,
    profile: TeacherProfile,
    seed: u64,
    /// Non-reserved vocabulary used for substitutions.
    words: Arc<Vec<String>>,
    template_df: Arc<DfStats>,
}

impl SyntheticTeacher {
    pub fn new(grammar: Arc<GrammarSpec>, profile: TeacherProfile, seed: u64) -> Self {
        let words = grammar
            .templates
            .iter()
            .flatten()
            .flat_map(|t| t.iter())
            .map(str::to_string)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .filter(|w| !RESERVED.contains(&w.as_str()))
            .collect();
        let all: Vec<TokenSequence> = grammar.templates.iter().flatten().cloned().collect();
        Self {
            template_df: Arc::new(DfStats::from_references(&all)),
            grammar,
            profile,
            seed,
            words: Arc::new(words),
        }
    }

    /// Chain text naming condition `c`, prefixed by the strategy's cue.
    fn chain(&self, task: &str, c: usize) -> String {
        let cue = match task {
            "explore" => "alternative ; inspect mediastinum pleura parenchyma",
            "backtrack" => "revisit earlier ; inspect parenchyma mediastinum pleura",
            "verify" => "verify ; inspect parenchyma mediastinum pleura",
            "correct" => "correct earlier ; inspect parenchyma mediastinum pleura",
            _ => "inspect parenchyma mediastinum pleura",
        };
        format!(
            "{cue} ; {} ; impression {}",
            self.grammar.findings[c].join(),
            self.grammar.condition_names[c]
        )
    }

    fn noisy(&self, base: &TokenSequence, rate: f64, rng: &mut ChaCha8Rng) -> TokenSequence {
        let mut out = Vec::with_capacity(base.len());
        for t in base.iter() {
            if rng.gen_bool(rate.clamp(0.0, 1.0)) {
                if rng.gen_bool(0.5) {
                    out.push(self.words.choose(rng).expect("grammar has words").clone());
                }
            } else {
                out.push(t.to_string());
            }
        }
        if out.is_empty() && !base.is_empty() {
            out.push(base.tokens()[0].clone());
        }
        TokenSequence::new(out).expect("grammar tokens are valid")
    }

    fn closest_condition(&self, answer: &TokenSequence) -> usize {
        let df = &self.template_df;
        let cfg = RewardConfig::default();
        let mut best = (0, f64::NEG_INFINITY);
        for (c, group) in self.grammar.templates.iter().enumerate() {
            for t in group {
                let s = precision_reward(answer, t, df, &cfg).unwrap_or(0.0);
                if s > best.1 {
                    best = (c, s);
                }
            }
        }
        best.0
    }

    fn respond(&self, text: &str) -> Result<String, BackendError> {
        let task = field(text, "task:").ok_or_else(|| BackendError::Decode("request has no task line".into()))?;
        let (c, n) = parse_context(text)?;
        let reference = self
            .grammar
            .report(c, n)
            .ok_or_else(|| BackendError::Decode(format!("no report for condition={c} noise={n}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(request_seed(self.seed, text));
        let p = &self.profile;

        if task == "reformat" {
            let last = text
                .lines()
                .rev()
                .find(|l| l.starts_with("step "))
                .ok_or_else(|| BackendError::Decode("reformat request without history".into()))?;
            let body = last.split_once(": ").map_or(last, |(_, b)| b);
            let prior = parse_tagged_output(body).map_err(|e| BackendError::Decode(e.to_string()))?;
            let answer = self.noisy(&tokenize(&prior.answer), p.reformat_noise, &mut rng);
            let mut named = self.closest_condition(&answer);
            let conditions = self.grammar.condition_count();
            if conditions > 1 && rng.gen_bool(p.chain_slip) {
                named = (named + rng.gen_range(1..conditions)) % conditions;
            }
            let chain = format!("{} ; consistent", self.chain("reformat", named));
            return Ok(compose_tagged(&chain, &answer.join()));
        }
        if !matches!(task, "init" | "explore" | "backtrack" | "verify" | "correct") {
            return Err(BackendError::Decode(format!("teacher cannot handle task {task:?}")));
        }

        let depth = text.lines().filter(|l| l.starts_with("step ")).count() as i32;
        let shrink = p.decay.powi(depth);
        let conditions = self.grammar.condition_count();
        let (answer, described) = if conditions > 1 && rng.gen_bool((p.wrong_condition * shrink).clamp(0.0, 1.0)) {
            let other = (c as usize + rng.gen_range(1..conditions)) % conditions;
            let paraphrases = self.grammar.templates[other].len();
            (self.grammar.templates[other][rng.gen_range(0..paraphrases)].clone(), other)
        } else {
            (self.noisy(reference, p.token_noise * shrink, &mut rng), c as usize)
        };
        Ok(compose_tagged(&self.chain(task, described), &answer.join()))
    }
}

impl ChatBackend for SyntheticTeacher {
    fn send(&mut self, messages: &[Message]) -> Result<String, BackendError> {
        self.respond(last_user(messages)?)
    }
}

impl BackendFactory for SyntheticTeacher {
    fn connect(&self) -> Result<Box<dyn ChatBackend>, BackendError> {
        Ok(Box::new(self.clone()))
    }
}

/// Judges consistency from the `answer:`/`reference:`/`chain:` lines of a
/// filter request: the answer must reach `threshold` against the reference
/// and the chain must name the context's condition.
#[derive(Debug, Clone)]
pub struct SyntheticExpert {
    grammar: Arc<GrammarSpec>,
    pub threshold: f64,
    /// Share of requests answered with free text instead of a verdict.
    pub garble_rate: f64,
    seed: u64,
}

impl SyntheticExpert {
    pub fn new(grammar: Arc<GrammarSpec>, threshold: f64, garble_rate: f64, seed: u64) -> Self {
        Self {
            grammar,
            threshold,
            garble_rate,
            seed,
        }
    }

    fn respond(&self, text: &str) -> Result<String, BackendError> {
        let missing = |k: &str| BackendError::Decode(format!("filter request has no {k} line"));
        let (c, _) = parse_context(text)?;
        let chain = field(text, "chain:").ok_or_else(|| missing("chain"))?;
        let answer = tokenize(field(text, "answer:").ok_or_else(|| missing("answer"))?);
        let reference = tokenize(field(text, "reference:").ok_or_else(|| missing("reference"))?);
        let mut rng = ChaCha8Rng::seed_from_u64(request_seed(self.seed, text));
        if rng.gen_bool(self.garble_rate.clamp(0.0, 1.0)) {
            return Ok("the reasoning looks plausible but I cannot say".into());
        }
        let df = DfStats::from_references(std::slice::from_ref(&reference));
        let score = precision_reward(&answer, &reference, &df, &RewardConfig::default()).unwrap_or(0.0);
        let name = self
            .grammar
            .condition_names
            .get(c as usize)
            .ok_or_else(|| BackendError::Decode(format!("unknown condition {c}")))?;
        let names_condition = tokenize(chain).iter().any(|t| t == name);
        Ok(if score >= self.threshold && names_condition {
            "CONSISTENT".into()
        } else {
            "INCONSISTENT".into()
        })
    }
}

impl ChatBackend for SyntheticExpert {
    fn send(&mut self, messages: &[Message]) -> Result<String, BackendError> {
        self.respond(last_user(messages)?)
    }
}

impl BackendFactory for SyntheticExpert {
    fn connect(&self) -> Result<Box<dyn ChatBackend>, BackendError> {
        Ok(Box::new(self.clone()))
    }
}
