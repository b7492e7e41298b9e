//! Supervised alignment and chain-of-thought fine-tuning of the toy policy.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    tokenize, ContextKey, CorpusError, CotRecord, SftRecord, TokenId, Vocabulary, ANSWER_CLOSE_ID, ANSWER_OPEN_ID,
    EOS_ID, THINK_CLOSE_ID, THINK_OPEN_ID,
};
use crate::policy::{self, Direction, FreezeMask, PolicyError, PolicyParams};

#[derive(Debug, Error)]
pub enum SftError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid sft config: {0}")]
    InvalidConfig(String),
    #[error("empty target sequence")]
    EmptyTarget,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(skip, default = "full_mask")]
    pub mask: FreezeMask,
}

fn full_mask() -> FreezeMask {
    FreezeMask::FULL
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 50,
            batch_size: 16,
            seed: 0,
            mask: FreezeMask::FULL,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<(), SftError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SftError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(SftError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(SftError::InvalidConfig("batch_size must be at least 1".into()));
        }
        self.mask.validate()?;
        Ok(())
    }
}

/// One encoded training example: the context and the full target id stream
/// (ending in EOS) read after the implicit BOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftExample {
    pub context: ContextKey,
    pub target: Vec<TokenId>,
}

impl SftExample {
    /// Alignment target: the report followed by EOS.
    pub fn from_report(record: &SftRecord, vocab: &Vocabulary) -> Result<Self, SftError> {
        let mut target = vocab.encode(&record.report)?;
        target.push(EOS_ID);
        Ok(Self {
            context: record.context,
            target,
        })
    }

    /// Chain-of-thought target: the tag-wrapped chain and answer followed by
    /// EOS, i.e. exactly the structure the format reward checks.
    pub fn from_cot(record: &CotRecord, vocab: &Vocabulary) -> Result<Self, SftError> {
        Ok(Self {
            context: record.context,
            target: cot_target(&record.chain, &vocab.encode(&record.answer)?, vocab)?,
        })
    }
}

/// `<think> chain </think> <answer> answer </answer> <eos>` as token ids.
pub fn cot_target(chain: &str, answer: &[TokenId], vocab: &Vocabulary) -> Result<Vec<TokenId>, SftError> {
    let chain = vocab.encode(&tokenize(chain))?;
    let mut target = Vec::with_capacity(chain.len() + answer.len() + 5);
    target.push(THINK_OPEN_ID);
    target.extend(chain);
    target.push(THINK_CLOSE_ID);
    target.push(ANSWER_OPEN_ID);
    target.extend_from_slice(answer);
    target.push(ANSWER_CLOSE_ID);
    target.push(EOS_ID);
    Ok(target)
}

/// Mean per-token negative log-likelihood of the example's target.
pub fn sft_loss(params: &PolicyParams, example: &SftExample) -> Result<f64, SftError> {
    if example.target.is_empty() {
        return Err(SftError::EmptyTarget);
    }
    let (_, lp) = policy::logits_and_logprob(params, example.context, &example.target)?;
    Ok(-lp / example.target.len() as f64)
}

/// Gradient of the mean batch loss (descent direction is its negative).
fn batch_loss_grad(
    params: &PolicyParams,
    batch: &[&SftExample],
    mask: FreezeMask,
) -> Result<(f64, PolicyParams), SftError> {
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        if ex.target.is_empty() {
            return Err(SftError::EmptyTarget);
        }
        let w = scale / ex.target.len() as f64;
        // d(-lp/T)/dθ = -(1/T) d lp/dθ
        policy::add_grad_log_prob(&mut grad, params, ex.context, &ex.target, mask, -w)?;
        loss += scale * sft_loss(params, ex)?;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftOutcome {
    pub params: PolicyParams,
    /// Mean per-example loss over each epoch, measured during the epoch.
    pub loss_curve: Vec<f64>,
}

/// Mini-batch gradient descent over `dataset`, reshuffled every epoch from
/// `cfg.seed`.
pub fn train_sft(params: &PolicyParams, dataset: &[SftExample], cfg: &SftConfig) -> Result<SftOutcome, SftError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(SftError::EmptyDataset);
    }
    let mut params = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SftExample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, grad) = batch_loss_grad(&params, &batch, cfg.mask)?;
            total += loss * batch.len() as f64;
            policy::apply_update(&mut params, &grad, cfg.lr, cfg.mask, Direction::Descent)?;
        }
        let mean = total / dataset.len() as f64;
        log::debug!("sft epoch {epoch}: mean loss {mean:.6}");
        curve.push(mean);
    }
    Ok(SftOutcome {
        params,
        loss_curve: curve,
    })
}

/// Mean loss over a dataset without updating.
pub fn mean_loss(params: &PolicyParams, dataset: &[SftExample]) -> Result<f64, SftError> {
    if dataset.is_empty() {
        return Err(SftError::EmptyDataset);
    }
    let mut total = 0.0;
    for ex in dataset {
        total += sft_loss(params, ex)?;
    }
    Ok(total / dataset.len() as f64)
}

pub const LOSS_CSV_HEADER: &str = "epoch,mean_loss";

pub fn write_loss_csv<W: Write>(mut out: W, curve: &[f64]) -> std::io::Result<()> {
    writeln!(out, "{LOSS_CSV_HEADER}")?;
    for (i, l) in curve.iter().enumerate() {
        writeln!(out, "{},{:.9}", i + 1, l)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GrammarSpec;

    fn example(target: Vec<TokenId>) -> SftExample {
        SftExample {
            context: ContextKey::new(1, 0),
            target,
        }
    }

    #[test]
    fn uniform_loss_is_log_v() {
        let p = PolicyParams::zeros(2, 11);
        let l = sft_loss(&p, &example(vec![3, 7, 2, EOS_ID])).unwrap();
        assert!((l - 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_give_vanishing_loss() {
        let target = vec![4, 6, 2, EOS_ID];
        let mut p = PolicyParams::zeros(2, 8);
        let mut prev = crate::corpus::BOS_ID;
        for &y in &target {
            p.decoder_mut()[prev * 8 + y] = 20.0;
            prev = y;
        }
        let l = sft_loss(&p, &example(target)).unwrap();
        assert!(l < 1e-6 && l >= 0.0);
    }

    #[test]
    fn loss_matches_logprob() {
        let p = PolicyParams::random(2, 9, 1.0, 4);
        let ex = example(vec![5, 5, 8, EOS_ID]);
        let (_, lp) = policy::logits_and_logprob(&p, ex.context, &ex.target).unwrap();
        assert_eq!(sft_loss(&p, &ex).unwrap(), -lp / 4.0);
    }

    #[test]
    fn memorizes_one_record() {
        let p = PolicyParams::zeros(4, 12);
        let data = vec![example(vec![6, 9, 3, 10, EOS_ID])];
        let cfg = SftConfig {
            lr: 0.5,
            epochs: 200,
            batch_size: 1,
            ..SftConfig::default()
        };
        let out = train_sft(&p, &data, &cfg).unwrap();
        assert!(mean_loss(&out.params, &data).unwrap() < 0.05);
        assert_eq!(out.loss_curve.len(), 200);
    }

    #[test]
    fn small_lr_curve_is_non_increasing() {
        let p = PolicyParams::random(3, 10, 0.5, 2);
        let data = vec![example(vec![2, 7, 7, 3, EOS_ID])];
        let cfg = SftConfig {
            lr: 0.01,
            epochs: 100,
            batch_size: 1,
            ..SftConfig::default()
        };
        let out = train_sft(&p, &data, &cfg).unwrap();
        for w in out.loss_curve.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn stage1_mask_freezes_decoder() {
        let p = PolicyParams::random(3, 10, 0.5, 3);
        let data = vec![example(vec![2, 7, EOS_ID]), example(vec![9, EOS_ID])];
        let cfg = SftConfig {
            mask: FreezeMask::STAGE1,
            epochs: 5,
            ..SftConfig::default()
        };
        let out = train_sft(&p, &data, &cfg).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(out.params.decoder()), bits(p.decoder()));
        assert_ne!(out.params.adapter(), p.adapter());

        let full = train_sft(&p, &data, &SftConfig { epochs: 5, ..SftConfig::default() }).unwrap();
        assert_ne!(full.params.decoder(), p.decoder());
    }

    #[test]
    fn deterministic_under_seed() {
        let p = PolicyParams::zeros(3, 10);
        let data: Vec<SftExample> = (0..7).map(|i| example(vec![2 + i, EOS_ID])).collect();
        let cfg = SftConfig {
            batch_size: 3,
            epochs: 4,
            seed: 17,
            ..SftConfig::default()
        };
        assert_eq!(train_sft(&p, &data, &cfg).unwrap(), train_sft(&p, &data, &cfg).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = PolicyParams::zeros(1, 4);
        assert!(matches!(train_sft(&p, &[], &SftConfig::default()), Err(SftError::EmptyDataset)));
        let bad = SftConfig {
            lr: 0.0,
            ..SftConfig::default()
        };
        assert!(train_sft(&p, &[example(vec![1])], &bad).is_err());
    }

    #[test]
    fn cot_target_layout() {
        let g = GrammarSpec::builtin_default();
        let v = &g.vocabulary;
        let answer = v.encode(&tokenize("lungs are clear .")).unwrap();
        let t = cot_target("inspect lungs", &answer, v).unwrap();
        assert_eq!(t[0], THINK_OPEN_ID);
        assert_eq!(t[3], THINK_CLOSE_ID);
        assert_eq!(t[4], ANSWER_OPEN_ID);
        assert_eq!(&t[5..9], answer.as_slice());
        assert_eq!(&t[9..], &[ANSWER_CLOSE_ID, EOS_ID]);
        let text = v.render(&t);
        let parsed = crate::corpus::parse_tagged_output(&text).unwrap();
        assert_eq!(tokenize(&parsed.answer), tokenize("lungs are clear ."));
    }

    #[test]
    fn loss_csv_layout() {
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &[1.5, 0.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,mean_loss\n1,1.500000000\n2,0.250000000\n");
    }
}
