//! Rule-based rewards for reinforcement fine-tuning.
//!
//! `r_all = r_format + r_acc`, where the format term checks the
//! `<think>…</think><answer>…</answer>` structure and the precision term is a
//! weighted blend of caption metrics between the answer and the reference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_tagged_output, tokenize, TokenSequence};
use crate::metrics::{cider_pair, meteor_exact, rouge_l, sentence_bleu, DfStats};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("reference must be non-empty")]
    EmptyReference,
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub bleu_avg: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider_scaled: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            bleu_avg: 0.25,
            rouge_l: 0.25,
            meteor: 0.25,
            cider_scaled: 0.25,
        }
    }
}

impl RewardWeights {
    fn as_array(&self) -> [f64; 4] {
        [self.bleu_avg, self.rouge_l, self.meteor, self.cider_scaled]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub format_value: f64,
    pub weights: RewardWeights,
    /// Divides CIDEr to bring it back to `[0, 1]`.
    pub cider_normalizer: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            format_value: 1.0,
            weights: RewardWeights::default(),
            cider_normalizer: 10.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let w = self.weights.as_array();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(RewardError::InvalidConfig("weights must be finite and nonnegative".into()));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(RewardError::InvalidConfig("weights must sum to a positive value".into()));
        }
        if !(self.format_value.is_finite() && self.format_value >= 0.0) {
            return Err(RewardError::InvalidConfig("format_value must be nonnegative".into()));
        }
        if !(self.cider_normalizer.is_finite() && self.cider_normalizer > 0.0) {
            return Err(RewardError::InvalidConfig("cider_normalizer must be positive".into()));
        }
        Ok(())
    }
}

/// `format_value` for a well-formed tagged output, otherwise zero.
pub fn format_reward(text: &str, cfg: &RewardConfig) -> f64 {
    if parse_tagged_output(text).is_ok() {
        cfg.format_value
    } else {
        0.0
    }
}

/// Individual metric components before weighting, each clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionComponents {
    pub bleu_avg: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider_scaled: f64,
}

pub fn precision_components(
    answer: &TokenSequence,
    reference: &TokenSequence,
    df: &DfStats,
    cfg: &RewardConfig,
) -> Result<PrecisionComponents, RewardError> {
    if reference.is_empty() {
        return Err(RewardError::EmptyReference);
    }
    let b = sentence_bleu(answer, reference);
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    Ok(PrecisionComponents {
        bleu_avg: clamp(b.iter().sum::<f64>() / b.len() as f64),
        rouge_l: clamp(rouge_l(answer, reference)),
        meteor: clamp(meteor_exact(answer, reference)),
        cider_scaled: clamp(cider_pair(answer, reference, df) / cfg.cider_normalizer),
    })
}

/// Weighted similarity between `answer` and `reference`.
pub fn precision_reward(
    answer: &TokenSequence,
    reference: &TokenSequence,
    df: &DfStats,
    cfg: &RewardConfig,
) -> Result<f64, RewardError> {
    let c = precision_components(answer, reference, df, cfg)?;
    let w = &cfg.weights;
    Ok(w.bleu_avg * c.bleu_avg + w.rouge_l * c.rouge_l + w.meteor * c.meteor + w.cider_scaled * c.cider_scaled)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RewardBreakdown {
    pub r_all: f64,
    pub r_format: f64,
    pub r_acc: f64,
}

/// Scores a raw policy output. The precision term looks at the answer span
/// when the output is well-formed and at the whole text otherwise. An empty
/// reference earns no precision reward.
pub fn composite_reward(
    raw_output: &str,
    reference: &TokenSequence,
    df: &DfStats,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let (r_format, scored) = match parse_tagged_output(raw_output) {
        Ok(t) => (cfg.format_value, tokenize(&t.answer)),
        Err(_) => (0.0, tokenize(raw_output)),
    };
    let r_acc = precision_reward(&scored, reference, df, cfg).unwrap_or(0.0);
    RewardBreakdown {
        r_all: r_format + r_acc,
        r_format,
        r_acc,
    }
}
