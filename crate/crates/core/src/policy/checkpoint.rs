//! JSON checkpoint container for [`PolicyParams`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PolicyError, PolicyParams};
use crate::corpus::GrammarSpec;

const FORMAT: &str = "cotforge-policy";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint was trained on grammar {found}, expected {expected}")]
    GrammarMismatch { expected: String, found: String },
    #[error("unsupported checkpoint {0}")]
    Unsupported(String),
    #[error("unknown stage label {0:?}")]
    UnknownStage(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which training stage produced a checkpoint. `Init` marks freshly
/// initialised weights that have not been trained yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Stage1,
    Stage2,
    Stage3,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Stage3 => "stage3",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = CheckpointError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "init" => Ok(Stage::Init),
            "stage1" => Ok(Stage::Stage1),
            "stage2" => Ok(Stage::Stage2),
            "stage3" => Ok(Stage::Stage3),
            other => Err(CheckpointError::UnknownStage(other.to_string())),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    format: String,
    version: u32,
    stage: Stage,
    grammar_hash: String,
    conditions: usize,
    vocab_size: usize,
    adapter: Vec<f64>,
    decoder: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub grammar_hash: String,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(stage: Stage, grammar: &GrammarSpec, params: PolicyParams) -> Self {
        Self {
            stage,
            grammar_hash: grammar.hash(),
            params,
        }
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        let wire = Wire {
            format: FORMAT.into(),
            version: VERSION,
            stage: self.stage,
            grammar_hash: self.grammar_hash.clone(),
            conditions: self.params.conditions(),
            vocab_size: self.params.vocab_size(),
            adapter: self.params.adapter().to_vec(),
            decoder: self.params.decoder().to_vec(),
        };
        Ok(serde_json::to_string(&wire)?)
    }

    /// Parses without checking the grammar hash.
    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let wire: Wire = serde_json::from_str(text)?;
        if wire.format != FORMAT || wire.version != VERSION {
            return Err(CheckpointError::Unsupported(format!("{} v{}", wire.format, wire.version)));
        }
        let params = PolicyParams::from_blocks(wire.conditions, wire.vocab_size, wire.adapter, wire.decoder)?;
        Ok(Self {
            stage: wire.stage,
            grammar_hash: wire.grammar_hash,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Loads and verifies that the checkpoint was trained on `grammar`.
    pub fn load(path: &Path, grammar: &GrammarSpec) -> Result<Self, CheckpointError> {
        let ck = Self::load_unchecked(path)?;
        let expected = grammar.hash();
        if ck.grammar_hash != expected {
            return Err(CheckpointError::GrammarMismatch {
                expected,
                found: ck.grammar_hash,
            });
        }
        Ok(ck)
    }

    /// Loads without the grammar check, for deliberately cross-grammar
    /// evaluation.
    pub fn load_unchecked(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
