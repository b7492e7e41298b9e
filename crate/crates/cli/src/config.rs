//! Flat `key = value` experiment configuration.
//!
//! Lines are `namespace.key = value`; `#` starts a comment. Every key in
//! [`KEYS`] must be present unless marked optional, and unknown keys are
//! rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use cotforge::corpus::GrammarSpec;
use cotforge::cot::{CollectionConfig, PromptTemplates, RetryPolicy, TeacherProfile};
use cotforge::grpo::GrpoConfig;
use cotforge::policy::FreezeMask;
use cotforge::rewards::{RewardConfig, RewardWeights};
use cotforge::sft::SftConfig;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("key `{key}`: cannot parse {value:?}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("key `{key}`: path {path} does not exist")]
    MissingPath { key: String, path: PathBuf },
}

/// Which implementation answers a chat role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Synthetic,
    Scripted,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "scripted" => Ok(Self::Scripted),
            "http" => Ok(Self::Http),
            _ => Err("expected synthetic, scripted or http".into()),
        }
    }
}

/// Key schema: name and whether it may be omitted.
pub const KEYS: &[(&str, bool)] = &[
    ("corpus.grammar", false),
    ("corpus.cross_grammar", false),
    ("corpus.seed", false),
    ("corpus.sft_records", false),
    ("corpus.rft_records", false),
    ("corpus.eval_records", false),
    ("sft.seed", false),
    ("sft.stage1.lr", false),
    ("sft.stage1.epochs", false),
    ("sft.stage1.batch_size", false),
    ("sft.stage2.lr", false),
    ("sft.stage2.epochs", false),
    ("sft.stage2.batch_size", false),
    ("cot.seed", false),
    ("cot.T", false),
    ("cot.N", false),
    ("cot.tau", false),
    ("cot.templates", true),
    ("cot.teacher.wrong_condition", false),
    ("cot.teacher.token_noise", false),
    ("cot.teacher.decay", false),
    ("cot.teacher.reformat_noise", false),
    ("cot.teacher.chain_slip", false),
    ("cot.expert.threshold", false),
    ("cot.expert.garble_rate", false),
    ("grpo.seed", false),
    ("grpo.G", false),
    ("grpo.beta", false),
    ("grpo.epsilon", false),
    ("grpo.lr", false),
    ("grpo.temperature", false),
    ("grpo.max_len", false),
    ("grpo.adv_eps", false),
    ("grpo.steps", false),
    ("grpo.batch_size", false),
    ("reward.format_value", false),
    ("reward.w_bleu", false),
    ("reward.w_rouge_l", false),
    ("reward.w_meteor", false),
    ("reward.w_cider", false),
    ("reward.cider_normalizer", false),
    ("backend.teacher", false),
    ("backend.expert", false),
    ("backend.teacher_script", true),
    ("backend.expert_script", true),
    ("backend.url", true),
    ("backend.model", true),
    ("backend.temperature", true),
    ("backend.reply_pointer", true),
    ("backend.timeout_secs", true),
    ("backend.max_retries", false),
    ("backend.backoff_ms", false),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Seeds {
    pub corpus: u64,
    pub sft: u64,
    pub cot: u64,
    pub grpo: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSection {
    pub grammar: String,
    pub cross_grammar: String,
    pub sft_records: usize,
    pub rft_records: usize,
    pub eval_records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendSection {
    pub teacher: BackendKind,
    pub expert: BackendKind,
    pub teacher_script: Option<PathBuf>,
    pub expert_script: Option<PathBuf>,
    pub url: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub reply_pointer: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Seeds,
    pub corpus: CorpusSection,
    pub stage1: SftConfig,
    pub stage2: SftConfig,
    pub collection: CollectionConfig,
    pub teacher: TeacherProfile,
    pub expert_threshold: f64,
    pub expert_garble_rate: f64,
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
    pub backend: BackendSection,
    /// Parsed `key -> value` text after overrides, used for hashing.
    entries: BTreeMap<String, String>,
}

struct Entries {
    map: BTreeMap<String, String>,
    base: PathBuf,
}

impl Entries {
    fn raw(&self, key: &'static str) -> Result<&str, ConfigError> {
        self.map.get(key).map(String::as_str).ok_or(ConfigError::MissingKey(key))
    }

    fn opt(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &'static str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key)?;
        v.parse().map_err(|e: T::Err| ConfigError::BadValue {
            key: key.into(),
            value: v.into(),
            reason: e.to_string(),
        })
    }

    fn parse_opt<T: std::str::FromStr>(&self, key: &'static str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.opt(key) {
            Some(_) => self.parse(key),
            None => Ok(default),
        }
    }

    fn path(&self, key: &'static str) -> Result<Option<PathBuf>, ConfigError> {
        let Some(v) = self.opt(key) else { return Ok(None) };
        let p = self.base.join(v);
        if !p.exists() {
            return Err(ConfigError::MissingPath { key: key.into(), path: p });
        }
        Ok(Some(p))
    }
}

fn invalid(key: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: e.to_string(),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: line_no });
            }
            if !KEYS.iter().any(|(name, _)| *name == k) {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    key: k.into(),
                });
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    key: k.into(),
                });
            }
        }
        for (k, optional) in KEYS {
            if !optional && !map.contains_key(*k) {
                return Err(ConfigError::MissingKey(k));
            }
        }
        Self::build(Entries {
            map,
            base: base.to_path_buf(),
        })
    }

    fn build(e: Entries) -> Result<Self, ConfigError> {
        let seeds = Seeds {
            corpus: e.parse("corpus.seed")?,
            sft: e.parse("sft.seed")?,
            cot: e.parse("cot.seed")?,
            grpo: e.parse("grpo.seed")?,
        };
        let corpus = CorpusSection {
            grammar: e.raw("corpus.grammar")?.to_string(),
            cross_grammar: e.raw("corpus.cross_grammar")?.to_string(),
            sft_records: e.parse("corpus.sft_records")?,
            rft_records: e.parse("corpus.rft_records")?,
            eval_records: e.parse("corpus.eval_records")?,
        };
        for (key, g) in [("corpus.grammar", &corpus.grammar), ("corpus.cross_grammar", &corpus.cross_grammar)] {
            let resolved = if matches!(g.as_str(), "default" | "cross") {
                g.clone()
            } else {
                let p = e.base.join(g);
                if !p.exists() {
                    return Err(ConfigError::MissingPath { key: key.into(), path: p });
                }
                p.to_string_lossy().into_owned()
            };
            GrammarSpec::resolve(&resolved).map_err(|err| invalid(key, err))?;
        }
        for (key, n) in [
            ("corpus.sft_records", corpus.sft_records),
            ("corpus.rft_records", corpus.rft_records),
            ("corpus.eval_records", corpus.eval_records),
        ] {
            if n == 0 {
                return Err(invalid(key, "must be positive"));
            }
        }

        let stage1 = SftConfig {
            lr: e.parse("sft.stage1.lr")?,
            epochs: e.parse("sft.stage1.epochs")?,
            batch_size: e.parse("sft.stage1.batch_size")?,
            seed: seeds.sft,
            mask: FreezeMask::STAGE1,
        };
        stage1.validate().map_err(|err| invalid("sft.stage1", err))?;
        let stage2 = SftConfig {
            lr: e.parse("sft.stage2.lr")?,
            epochs: e.parse("sft.stage2.epochs")?,
            batch_size: e.parse("sft.stage2.batch_size")?,
            seed: seeds.sft ^ 0x2,
            mask: FreezeMask::FULL,
        };
        stage2.validate().map_err(|err| invalid("sft.stage2", err))?;

        let retry = RetryPolicy {
            max_retries: e.parse("backend.max_retries")?,
            backoff: Duration::from_millis(e.parse("backend.backoff_ms")?),
        };
        let templates = match e.path("cot.templates")? {
            Some(dir) => PromptTemplates::load_dir(&dir).map_err(|err| invalid("cot.templates", err))?,
            None => PromptTemplates::default(),
        };
        let collection = CollectionConfig {
            max_attempts: e.parse("cot.T")?,
            max_depth: e.parse("cot.N")?,
            tau: e.parse("cot.tau")?,
            strategy_seed: seeds.cot,
            templates,
            retry,
        };
        collection.validate().map_err(|err| invalid("cot", err))?;
        let teacher = TeacherProfile {
            wrong_condition: e.parse("cot.teacher.wrong_condition")?,
            token_noise: e.parse("cot.teacher.token_noise")?,
            decay: e.parse("cot.teacher.decay")?,
            reformat_noise: e.parse("cot.teacher.reformat_noise")?,
            chain_slip: e.parse("cot.teacher.chain_slip")?,
        };
        for (key, v) in [
            ("cot.teacher.wrong_condition", teacher.wrong_condition),
            ("cot.teacher.token_noise", teacher.token_noise),
            ("cot.teacher.decay", teacher.decay),
            ("cot.teacher.reformat_noise", teacher.reformat_noise),
            ("cot.teacher.chain_slip", teacher.chain_slip),
        ] {
            probability(key, v)?;
        }
        let expert_threshold: f64 = e.parse("cot.expert.threshold")?;
        let expert_garble_rate: f64 = e.parse("cot.expert.garble_rate")?;
        probability("cot.expert.threshold", expert_threshold)?;
        probability("cot.expert.garble_rate", expert_garble_rate)?;

        let grpo = GrpoConfig {
            group_size: e.parse("grpo.G")?,
            beta: e.parse("grpo.beta")?,
            epsilon: e.parse("grpo.epsilon")?,
            lr: e.parse("grpo.lr")?,
            temperature: e.parse("grpo.temperature")?,
            max_len: e.parse("grpo.max_len")?,
            adv_eps: e.parse("grpo.adv_eps")?,
            steps: e.parse("grpo.steps")?,
            batch_size: e.parse("grpo.batch_size")?,
            seed: seeds.grpo,
            mask: FreezeMask::FULL,
        };
        grpo.validate().map_err(|err| invalid("grpo", err))?;

        let reward = RewardConfig {
            format_value: e.parse("reward.format_value")?,
            weights: RewardWeights {
                bleu_avg: e.parse("reward.w_bleu")?,
                rouge_l: e.parse("reward.w_rouge_l")?,
                meteor: e.parse("reward.w_meteor")?,
                cider_scaled: e.parse("reward.w_cider")?,
            },
            cider_normalizer: e.parse("reward.cider_normalizer")?,
        };
        reward.validate().map_err(|err| invalid("reward", err))?;

        let backend = BackendSection {
            teacher: e.parse("backend.teacher")?,
            expert: e.parse("backend.expert")?,
            teacher_script: e.path("backend.teacher_script")?,
            expert_script: e.path("backend.expert_script")?,
            url: e.opt("backend.url").map(str::to_string),
            model: e.opt("backend.model").map(str::to_string),
            temperature: e.parse_opt("backend.temperature", 0.0)?,
            reply_pointer: e.opt("backend.reply_pointer").map(str::to_string),
            timeout: Duration::from_secs(e.parse_opt("backend.timeout_secs", 60u64)?),
            retry,
        };
        for (role, kind, script) in [
            ("backend.teacher_script", backend.teacher, &backend.teacher_script),
            ("backend.expert_script", backend.expert, &backend.expert_script),
        ] {
            if kind == BackendKind::Scripted && script.is_none() {
                return Err(invalid(role, "required by a scripted backend"));
            }
        }
        if backend.teacher == BackendKind::Http || backend.expert == BackendKind::Http {
            for key in ["backend.url", "backend.model"] {
                if e.opt(key).is_none() {
                    return Err(invalid(key, "required by the http backend"));
                }
            }
        }

        Ok(Self {
            seeds,
            corpus,
            stage1,
            stage2,
            collection,
            teacher,
            expert_threshold,
            expert_garble_rate,
            grpo,
            reward,
            backend,
            entries: e.map,
        })
    }

    /// Replaces every stage seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = Seeds {
            corpus: seed,
            sft: seed,
            cot: seed,
            grpo: seed,
        };
        self.stage1.seed = seed;
        self.stage2.seed = seed ^ 0x2;
        self.collection.strategy_seed = seed;
        self.grpo.seed = seed;
        for k in ["corpus.seed", "sft.seed", "cot.seed", "grpo.seed"] {
            self.entries.insert(k.into(), seed.to_string());
        }
        self
    }

    /// Canonical `key = value` text, keys sorted.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex sha256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    fn resolve_grammar(&self, name: &str) -> Result<GrammarSpec, ConfigError> {
        GrammarSpec::resolve(name).map_err(|err| invalid("corpus.grammar", err))
    }

    pub fn grammar(&self) -> Result<GrammarSpec, ConfigError> {
        self.resolve_grammar(&self.corpus.grammar)
    }

    pub fn cross_grammar(&self) -> Result<GrammarSpec, ConfigError> {
        self.resolve_grammar(&self.corpus.cross_grammar)
    }
}

fn probability(key: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(key, format!("{v} is outside [0, 1]")))
    }
}

/// The desk-scale reference configuration shipped in `configs/desk.conf`.
pub const DESK_CONFIG: &str = include_str!("../../../configs/desk.conf");
