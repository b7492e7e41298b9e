//! Group-relative policy optimisation over the toy policy.
//!
//! For each prompt the current policy samples a group of `G` outputs, scores
//! them with the composite reward and normalises the rewards within the group.
//! The update ascends the clipped ratio objective with a per-token KL penalty
//! towards the frozen reference policy.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ContextKey, RftRecord, TokenId, TokenSequence, Vocabulary, BOS_ID};
use crate::metrics::DfStats;
use crate::policy::{
    self, accumulate_step_grad, derive_seed, log_softmax, Direction, FreezeMask, Gradient, PolicyError,
    PolicyParams, ReferencePolicy,
};
use crate::rewards::{composite_reward, RewardBreakdown, RewardConfig};

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("invalid grpo config: {0}")]
    InvalidConfig(String),
    #[error("RFT dataset is empty")]
    EmptyDataset,
    #[error("non-finite {0} in objective")]
    NonFinite(&'static str),
    #[error("malformed rollout group: {0}")]
    MalformedGroup(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    /// Group size `G`.
    pub group_size: usize,
    /// KL coefficient.
    pub beta: f64,
    /// Clip range of the probability ratio.
    pub epsilon: f64,
    pub lr: f64,
    pub temperature: f64,
    pub max_len: usize,
    pub adv_eps: f64,
    pub steps: usize,
    /// Prompts per step; each gets its own update.
    pub batch_size: usize,
    pub seed: u64,
    #[serde(skip, default = "full_mask")]
    pub mask: FreezeMask,
}

fn full_mask() -> FreezeMask {
    FreezeMask::FULL
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            beta: 0.05,
            epsilon: 0.2,
            lr: 0.1,
            temperature: 1.0,
            max_len: 48,
            adv_eps: 1e-8,
            steps: 300,
            batch_size: 4,
            seed: 0,
            mask: FreezeMask::FULL,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: String| Err(GrpoError::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("G must be at least 2, got {}", self.group_size));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.max_len == 0 || self.batch_size == 0 {
            return bad("max_len and batch_size must be at least 1".into());
        }
        if !(self.adv_eps > 0.0) {
            return bad("adv_eps must be positive".into());
        }
        self.mask.validate()?;
        Ok(())
    }
}

/// `(r_i - mean) / (std + eps)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], adv_eps: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    rewards.iter().map(|r| (r - mean) / (std + adv_eps)).collect()
}

/// Per-token KL estimator `exp(d) - d - 1` with `d = ref - new`.
pub fn kl_estimate(logp_new: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_new;
    d.exp_m1() - d
}

/// `min(rho * a, clip(rho, 1 - eps, 1 + eps) * a)`.
pub fn clipped_term(rho: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon);
    (rho * advantage).min(clipped * advantage)
}

/// One sampled output.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<TokenId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub context: ContextKey,
    pub outputs: Vec<Rollout>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub ref_logprobs: Vec<Vec<f64>>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    fn check(&self) -> Result<(), GrpoError> {
        let g = self.outputs.len();
        if g == 0 || self.old_logprobs.len() != g || self.ref_logprobs.len() != g || self.advantages.len() != g {
            return Err(GrpoError::MalformedGroup("per-output arrays disagree in length".into()));
        }
        for (i, o) in self.outputs.iter().enumerate() {
            if o.tokens.is_empty() || self.old_logprobs[i].len() != o.tokens.len() || self.ref_logprobs[i].len() != o.tokens.len()
            {
                return Err(GrpoError::MalformedGroup(format!("output {i} has inconsistent token arrays")));
            }
        }
        Ok(())
    }
}

/// Shared, read-only inputs of the reward computation.
#[derive(Debug, Clone, Copy)]
pub struct RewardEnv<'a> {
    pub vocab: &'a Vocabulary,
    pub df: &'a DfStats,
    pub reward: &'a RewardConfig,
}

/// Samples `G` outputs from `params` and fills in everything the objective
/// needs. `seed` fixes the whole group.
pub fn rollout_group(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    context: ContextKey,
    target: &TokenSequence,
    env: RewardEnv<'_>,
    cfg: &GrpoConfig,
    seed: u64,
) -> Result<RolloutGroup, GrpoError> {
    let samples: Vec<Result<(Rollout, Vec<f64>, Vec<f64>, RewardBreakdown), PolicyError>> = (0..cfg.group_size)
        .into_par_iter()
        .map(|i| {
            let tokens = policy::sample_sequence(
                params,
                context,
                cfg.temperature,
                cfg.max_len,
                derive_seed(seed, &[i as u64]),
            )?;
            let old = policy::token_logprobs(params, context, &tokens)?;
            let rf = policy::token_logprobs(reference.params(), context, &tokens)?;
            let text = env.vocab.render(&tokens);
            let reward = composite_reward(&text, target, env.df, env.reward);
            Ok((Rollout { tokens, text }, old, rf, reward))
        })
        .collect();
    let mut group = RolloutGroup {
        context,
        outputs: Vec::with_capacity(cfg.group_size),
        old_logprobs: Vec::with_capacity(cfg.group_size),
        ref_logprobs: Vec::with_capacity(cfg.group_size),
        rewards: Vec::with_capacity(cfg.group_size),
        advantages: Vec::new(),
    };
    for s in samples {
        let (o, old, rf, r) = s?;
        group.outputs.push(o);
        group.old_logprobs.push(old);
        group.ref_logprobs.push(rf);
        group.rewards.push(r);
    }
    let r_all: Vec<f64> = group.rewards.iter().map(|r| r.r_all).collect();
    group.advantages = group_advantages(&r_all, cfg.adv_eps);
    Ok(group)
}

/// Objective value, its gradient and diagnostics at `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: Gradient,
    /// Mean per-token KL estimate against the reference.
    pub mean_kl: f64,
    /// Share of tokens whose ratio lies outside `[1 - eps, 1 + eps]`.
    pub clip_fraction: f64,
}

/// Mean over outputs of the per-output token mean of
/// `min(rho A, clip(rho) A) - beta k`, with its analytic gradient. The clipped
/// branch contributes no gradient when it is the one selected.
pub fn grpo_objective(
    params: &PolicyParams,
    group: &RolloutGroup,
    beta: f64,
    epsilon: f64,
    mask: FreezeMask,
) -> Result<ObjectiveEval, GrpoError> {
    group.check()?;
    let c = group.context.condition_id as usize;
    if c >= params.conditions() {
        return Err(PolicyError::UnknownCondition(group.context.condition_id).into());
    }
    let g = group.outputs.len() as f64;
    let mut grad = params.zeros_like();
    let mut value = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    let mut tokens = 0usize;
    for (i, out) in group.outputs.iter().enumerate() {
        let a = group.advantages[i];
        let t_len = out.tokens.len() as f64;
        let mut prev = BOS_ID;
        let mut per_output = 0.0;
        for (t, &y) in out.tokens.iter().enumerate() {
            if y >= params.vocab_size() {
                return Err(PolicyError::OutOfVocabulary(y).into());
            }
            let logp_row = log_softmax(&params.step_logits(c, prev));
            let lp = logp_row[y];
            let rho = (lp - group.old_logprobs[i][t]).exp();
            let k = kl_estimate(lp, group.ref_logprobs[i][t]);
            if !(rho.is_finite() && k.is_finite()) {
                return Err(GrpoError::NonFinite("ratio or KL"));
            }
            per_output += clipped_term(rho, a, epsilon) - beta * k;
            kl_sum += k;
            tokens += 1;
            if rho < 1.0 - epsilon || rho > 1.0 + epsilon {
                clipped += 1;
            }
            let surrogate_active = rho * a <= rho.clamp(1.0 - epsilon, 1.0 + epsilon) * a;
            let d_clip = if surrogate_active { a * rho } else { 0.0 };
            let d_kl = -beta * (1.0 - (group.ref_logprobs[i][t] - lp).exp());
            let w = (d_clip + d_kl) / (g * t_len);
            if w != 0.0 {
                let probs: Vec<f64> = logp_row.iter().map(|l| l.exp()).collect();
                accumulate_step_grad(&mut grad, &probs, c, prev, y, w, mask);
            }
            prev = y;
        }
        value += per_output / t_len;
    }
    value /= g;
    if !value.is_finite() || !grad.is_finite() {
        return Err(GrpoError::NonFinite("objective"));
    }
    Ok(ObjectiveEval {
        value,
        gradient: grad,
        mean_kl: kl_sum / tokens as f64,
        clip_fraction: clipped as f64 / tokens as f64,
    })
}

/// Share of tokens of `group` whose ratio under `params` falls outside the
/// clip range.
pub fn clip_fraction(params: &PolicyParams, group: &RolloutGroup, epsilon: f64) -> Result<f64, GrpoError> {
    let mut clipped = 0usize;
    let mut total = 0usize;
    for (i, out) in group.outputs.iter().enumerate() {
        let lps = policy::token_logprobs(params, group.context, &out.tokens)?;
        for (lp, old) in lps.iter().zip(&group.old_logprobs[i]) {
            let rho = (lp - old).exp();
            if rho < 1.0 - epsilon || rho > 1.0 + epsilon {
                clipped += 1;
            }
            total += 1;
        }
    }
    Ok(clipped as f64 / total.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub mean_r_all: f64,
    pub mean_r_acc: f64,
    pub mean_r_format: f64,
    /// Mean per-token KL estimate before the update.
    pub mean_kl: f64,
    /// Share of sampled tokens whose ratio left the clip range after the
    /// update.
    pub clip_fraction: f64,
    /// Share of outputs with a well-formed tagged structure.
    pub format_rate: f64,
}

/// One optimisation step over `batch`: for each record, refresh the
/// behaviour policy, sample a group, and take one ascent step.
pub fn grpo_step(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    batch: &[&RftRecord],
    env: RewardEnv<'_>,
    cfg: &GrpoConfig,
    step: usize,
) -> Result<(PolicyParams, StepStats), GrpoError> {
    if batch.is_empty() {
        return Err(GrpoError::EmptyDataset);
    }
    let mut params = params.clone();
    let mut stats = StepStats::default();
    let mut outputs = 0usize;
    for (b, rec) in batch.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &[step as u64, b as u64]);
        let group = rollout_group(&params, reference, rec.context, &rec.reference, env, cfg, seed)?;
        let eval = grpo_objective(&params, &group, cfg.beta, cfg.epsilon, cfg.mask)?;
        policy::apply_update(&mut params, &eval.gradient, cfg.lr, cfg.mask, Direction::Ascent)?;
        for r in &group.rewards {
            stats.mean_r_all += r.r_all;
            stats.mean_r_acc += r.r_acc;
            stats.mean_r_format += r.r_format;
            if r.r_format > 0.0 {
                stats.format_rate += 1.0;
            }
        }
        outputs += group.outputs.len();
        stats.mean_kl += eval.mean_kl;
        stats.clip_fraction += clip_fraction(&params, &group, cfg.epsilon)?;
    }
    let n = outputs as f64;
    let b = batch.len() as f64;
    stats.mean_r_all /= n;
    stats.mean_r_acc /= n;
    stats.mean_r_format /= n;
    stats.format_rate /= n;
    stats.mean_kl /= b;
    stats.clip_fraction /= b;
    Ok((params, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RftOutcome {
    pub params: PolicyParams,
    /// One entry per step.
    pub curve: Vec<StepStats>,
}

/// Runs `cfg.steps` GRPO steps over seeded shuffles of `dataset`, anchored to
/// a reference snapshot of the starting parameters.
pub fn train_rft(
    params: &PolicyParams,
    dataset: &[RftRecord],
    env: RewardEnv<'_>,
    cfg: &GrpoConfig,
) -> Result<RftOutcome, GrpoError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(GrpoError::EmptyDataset);
    }
    let reference = policy::snapshot_reference(params);
    let mut params = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[u64::MAX]));
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..dataset.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&dataset[order[cursor]]);
            cursor += 1;
        }
        let (next, stats) = grpo_step(&params, &reference, &batch, env, cfg, step)?;
        params = next;
        log::debug!(
            "rft step {step}: r_all {:.4} r_acc {:.4} format {:.3} kl {:.5}",
            stats.mean_r_all,
            stats.mean_r_acc,
            stats.format_rate,
            stats.mean_kl
        );
        curve.push(stats);
    }
    Ok(RftOutcome { params, curve })
}

pub const REWARD_CSV_HEADER: &str = "step,mean_r_all,mean_r_acc,mean_r_format,mean_kl,clip_fraction";

pub fn write_reward_csv<W: Write>(mut out: W, curve: &[StepStats]) -> std::io::Result<()> {
    writeln!(out, "{REWARD_CSV_HEADER}")?;
    for (i, s) in curve.iter().enumerate() {
        writeln!(
            out,
            "{},{:.9},{:.9},{:.9},{:.9},{:.9}",
            i + 1,
            s.mean_r_all,
            s.mean_r_acc,
            s.mean_r_format,
            s.mean_kl,
            s.clip_fraction
        )?;
    }
    Ok(())
}
