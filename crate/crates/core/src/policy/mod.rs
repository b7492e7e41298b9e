//! Toy autoregressive policy standing in for a vision-language model.
//!
//! Step logits are `adapter[condition] + decoder[previous token]`: the adapter
//! block plays the role of the vision projector (it only sees the context) and
//! the decoder block that of the language model. Log-probabilities and their
//! gradients are exact.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, Stage};

use crate::corpus::{ContextKey, TokenId, BOS_ID, EOS_ID};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("token id {0} is outside the vocabulary")]
    OutOfVocabulary(TokenId),
    #[error("condition {0} is outside the adapter block")]
    UnknownCondition(u32),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Which parameter blocks an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeMask {
    pub adapter_trainable: bool,
    pub decoder_trainable: bool,
}

impl FreezeMask {
    /// Alignment: only the adapter learns.
    pub const STAGE1: Self = Self {
        adapter_trainable: true,
        decoder_trainable: false,
    };
    /// Chain-of-thought tuning and RL: both blocks learn.
    pub const FULL: Self = Self {
        adapter_trainable: true,
        decoder_trainable: true,
    };

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !self.adapter_trainable && !self.decoder_trainable {
            return Err(PolicyError::InvalidArgument("freeze mask leaves nothing trainable".into()));
        }
        Ok(())
    }
}

/// Dense `[C x V]` adapter and `[V x V]` decoder blocks, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    conditions: usize,
    vocab: usize,
    adapter: Vec<f64>,
    decoder: Vec<f64>,
}

/// A gradient (or any update direction) with the same shape as the params.
pub type Gradient = PolicyParams;

impl PolicyParams {
    pub fn zeros(conditions: usize, vocab: usize) -> Self {
        Self {
            conditions,
            vocab,
            adapter: vec![0.0; conditions * vocab],
            decoder: vec![0.0; vocab * vocab],
        }
    }

    pub fn from_blocks(conditions: usize, vocab: usize, adapter: Vec<f64>, decoder: Vec<f64>) -> Result<Self, PolicyError> {
        if adapter.len() != conditions * vocab || decoder.len() != vocab * vocab {
            return Err(PolicyError::Shape(format!(
                "expected {}+{} entries, got {}+{}",
                conditions * vocab,
                vocab * vocab,
                adapter.len(),
                decoder.len()
            )));
        }
        let p = Self {
            conditions,
            vocab,
            adapter,
            decoder,
        };
        if !p.is_finite() {
            return Err(PolicyError::NonFinite("parameter"));
        }
        Ok(p)
    }

    /// Zero-mean Gaussian initialisation with standard deviation `scale`.
    pub fn random(conditions: usize, vocab: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    // Box-Muller keeps this independent of rand_distr versions
                    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.gen();
                    scale * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect()
        };
        let adapter = draw(conditions * vocab);
        let decoder = draw(vocab * vocab);
        Self {
            conditions,
            vocab,
            adapter,
            decoder,
        }
    }

    pub fn conditions(&self) -> usize {
        self.conditions
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn adapter(&self) -> &[f64] {
        &self.adapter
    }

    pub fn decoder(&self) -> &[f64] {
        &self.decoder
    }

    pub fn adapter_mut(&mut self) -> &mut [f64] {
        &mut self.adapter
    }

    pub fn decoder_mut(&mut self) -> &mut [f64] {
        &mut self.decoder
    }

    pub fn adapter_row(&self, condition: usize) -> &[f64] {
        &self.adapter[condition * self.vocab..(condition + 1) * self.vocab]
    }

    pub fn decoder_row(&self, prev: TokenId) -> &[f64] {
        &self.decoder[prev * self.vocab..(prev + 1) * self.vocab]
    }

    pub fn is_finite(&self) -> bool {
        self.adapter.iter().chain(&self.decoder).all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.conditions == other.conditions && self.vocab == other.vocab
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.adapter.iter_mut().zip(&other.adapter) {
            *a += scale * b;
        }
        for (a, b) in self.decoder.iter_mut().zip(&other.decoder) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.adapter.iter_mut().chain(self.decoder.iter_mut()) {
            *v *= s;
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.conditions, self.vocab)
    }

    /// Zeroes the blocks `mask` freezes.
    pub fn apply_mask(&mut self, mask: FreezeMask) {
        if !mask.adapter_trainable {
            self.adapter.iter_mut().for_each(|v| *v = 0.0);
        }
        if !mask.decoder_trainable {
            self.decoder.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.adapter
            .iter()
            .chain(&self.decoder)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_condition(&self, context: ContextKey) -> Result<usize, PolicyError> {
        let c = context.condition_id as usize;
        if c >= self.conditions {
            return Err(PolicyError::UnknownCondition(context.condition_id));
        }
        Ok(c)
    }

    fn check_tokens(&self, seq: &[TokenId]) -> Result<(), PolicyError> {
        match seq.iter().find(|&&t| t >= self.vocab) {
            Some(&t) => Err(PolicyError::OutOfVocabulary(t)),
            None => Ok(()),
        }
    }

    /// Raw logits for one step.
    pub fn step_logits(&self, condition: usize, prev: TokenId) -> Vec<f64> {
        self.adapter_row(condition)
            .iter()
            .zip(self.decoder_row(prev))
            .map(|(a, d)| a + d)
            .collect()
    }
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Per-step logits and the summed log-probability of `sequence`, read after
/// an implicit BOS.
pub fn logits_and_logprob(
    params: &PolicyParams,
    context: ContextKey,
    sequence: &[TokenId],
) -> Result<(Vec<Vec<f64>>, f64), PolicyError> {
    let c = params.check_condition(context)?;
    params.check_tokens(sequence)?;
    let mut prev = BOS_ID;
    let mut rows = Vec::with_capacity(sequence.len());
    let mut total = 0.0;
    for &y in sequence {
        let logits = params.step_logits(c, prev);
        total += log_softmax(&logits)[y];
        rows.push(logits);
        prev = y;
    }
    if !total.is_finite() {
        return Err(PolicyError::NonFinite("log-probability"));
    }
    Ok((rows, total))
}

/// Log-probability of each token of `sequence`.
pub fn token_logprobs(params: &PolicyParams, context: ContextKey, sequence: &[TokenId]) -> Result<Vec<f64>, PolicyError> {
    let c = params.check_condition(context)?;
    params.check_tokens(sequence)?;
    let mut prev = BOS_ID;
    let out: Vec<f64> = sequence
        .iter()
        .map(|&y| {
            let lp = log_softmax(&params.step_logits(c, prev))[y];
            prev = y;
            lp
        })
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::NonFinite("log-probability"));
    }
    Ok(out)
}

/// Ancestral sampling until EOS (included in the output) or `max_len` tokens.
/// A temperature of exactly zero decodes greedily, ties going to the lowest
/// token id.
pub fn sample_sequence(
    params: &PolicyParams,
    context: ContextKey,
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<Vec<TokenId>, PolicyError> {
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(PolicyError::InvalidArgument(format!("temperature {temperature}")));
    }
    if max_len == 0 {
        return Err(PolicyError::InvalidArgument("max_len must be at least 1".into()));
    }
    let c = params.check_condition(context)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = BOS_ID;
    let mut out = Vec::new();
    while out.len() < max_len {
        let logits = params.step_logits(c, prev);
        let next = if temperature == 0.0 {
            argmax(&logits)
        } else {
            let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
            draw(&softmax(&scaled), &mut rng)
        };
        out.push(next);
        if next == EOS_ID {
            break;
        }
        prev = next;
    }
    Ok(out)
}

/// Greedy decoding.
pub fn greedy_decode(params: &PolicyParams, context: ContextKey, max_len: usize) -> Result<Vec<TokenId>, PolicyError> {
    sample_sequence(params, context, 0.0, max_len, 0)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn draw<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

/// Adds `weight * d log p(y | prev, c) / d params` into `grad`.
///
/// The per-step derivative is `onehot(y) - softmax(logits)`, landing in the
/// adapter row `c` and the decoder row `prev`.
pub fn accumulate_step_grad(
    grad: &mut Gradient,
    probs: &[f64],
    condition: usize,
    prev: TokenId,
    y: TokenId,
    weight: f64,
    mask: FreezeMask,
) {
    let v = grad.vocab;
    if mask.adapter_trainable {
        let row = &mut grad.adapter[condition * v..(condition + 1) * v];
        for (k, g) in row.iter_mut().enumerate() {
            *g -= weight * probs[k];
        }
        row[y] += weight;
    }
    if mask.decoder_trainable {
        let row = &mut grad.decoder[prev * v..(prev + 1) * v];
        for (k, g) in row.iter_mut().enumerate() {
            *g -= weight * probs[k];
        }
        row[y] += weight;
    }
}

/// Gradient of the summed log-probability of `sequence`. Frozen blocks come
/// back as exact zeros.
pub fn grad_log_prob(
    params: &PolicyParams,
    context: ContextKey,
    sequence: &[TokenId],
    mask: FreezeMask,
) -> Result<Gradient, PolicyError> {
    let mut grad = params.zeros_like();
    add_grad_log_prob(&mut grad, params, context, sequence, mask, 1.0)?;
    Ok(grad)
}

/// `grad += weight * d log p(sequence) / d params`.
pub fn add_grad_log_prob(
    grad: &mut Gradient,
    params: &PolicyParams,
    context: ContextKey,
    sequence: &[TokenId],
    mask: FreezeMask,
    weight: f64,
) -> Result<(), PolicyError> {
    let c = params.check_condition(context)?;
    params.check_tokens(sequence)?;
    let mut prev = BOS_ID;
    for &y in sequence {
        let probs = softmax(&params.step_logits(c, prev));
        accumulate_step_grad(grad, &probs, c, prev, y, weight, mask);
        prev = y;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Minimising a loss.
    Descent,
    /// Maximising an objective.
    Ascent,
}

/// Moves unfrozen blocks by `lr * grad` in `direction`; frozen blocks are
/// left bit-identical.
pub fn apply_update(
    params: &mut PolicyParams,
    grad: &Gradient,
    lr: f64,
    mask: FreezeMask,
    direction: Direction,
) -> Result<(), PolicyError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(PolicyError::InvalidArgument(format!("learning rate {lr}")));
    }
    if !params.same_shape(grad) {
        return Err(PolicyError::Shape("gradient does not match parameters".into()));
    }
    if !grad.is_finite() {
        return Err(PolicyError::NonFinite("gradient"));
    }
    let step = match direction {
        Direction::Descent => -lr,
        Direction::Ascent => lr,
    };
    if mask.adapter_trainable {
        for (p, g) in params.adapter.iter_mut().zip(&grad.adapter) {
            *p += step * g;
        }
    }
    if mask.decoder_trainable {
        for (p, g) in params.decoder.iter_mut().zip(&grad.decoder) {
            *p += step * g;
        }
    }
    Ok(())
}

/// Frozen copy of the policy taken when reinforcement fine-tuning starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy(std::sync::Arc<PolicyParams>);

impl ReferencePolicy {
    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

pub fn snapshot_reference(params: &PolicyParams) -> ReferencePolicy {
    ReferencePolicy(std::sync::Arc::new(params.clone()))
}

/// Mixes a base seed with a path of indices into an independent stream seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(splitmix(base), |acc, &i| splitmix(acc ^ splitmix(i)))
}
