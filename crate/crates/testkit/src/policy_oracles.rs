//! Dense reference computations for the toy policy and the group objective.
//!
//! Parameters are passed as raw row-major blocks (`adapter` is
//! `conditions x vocab`, `decoder` is `vocab x vocab`) and every quantity is
//! recomputed from scratch, token by token.

/// Start-of-sequence id; the first step conditions on it.
pub const BOS: usize = 0;

fn step_logprobs(adapter: &[f64], decoder: &[f64], vocab: usize, c: usize, prev: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..vocab)
        .map(|k| adapter[c * vocab + k] + decoder[prev * vocab + k])
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    logits.iter().map(|l| l - m - z.ln()).collect()
}

/// Per-token log-probabilities of `seq` under condition `c`.
pub fn token_logprobs(adapter: &[f64], decoder: &[f64], vocab: usize, c: usize, seq: &[usize]) -> Vec<f64> {
    let mut prev = BOS;
    seq.iter()
        .map(|&y| {
            let lp = step_logprobs(adapter, decoder, vocab, c, prev)[y];
            prev = y;
            lp
        })
        .collect()
}

pub fn sequence_logprob(adapter: &[f64], decoder: &[f64], vocab: usize, c: usize, seq: &[usize]) -> f64 {
    token_logprobs(adapter, decoder, vocab, c, seq).iter().sum()
}

/// Inputs of the group objective other than the parameters being varied.
#[derive(Debug, Clone)]
pub struct GroupFixture {
    pub vocab: usize,
    pub condition: usize,
    pub outputs: Vec<Vec<usize>>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub ref_logprobs: Vec<Vec<f64>>,
    pub advantages: Vec<f64>,
    pub beta: f64,
    pub epsilon: f64,
}

/// Value of the clipped, KL-penalised group objective at the given blocks.
pub fn group_objective(fx: &GroupFixture, adapter: &[f64], decoder: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, out) in fx.outputs.iter().enumerate() {
        let lps = token_logprobs(adapter, decoder, fx.vocab, fx.condition, out);
        let mut s = 0.0;
        for (t, lp) in lps.iter().enumerate() {
            let rho = (lp - fx.old_logprobs[i][t]).exp();
            let a = fx.advantages[i];
            let lo = 1.0 - fx.epsilon;
            let hi = 1.0 + fx.epsilon;
            let clipped = if rho < lo { lo } else if rho > hi { hi } else { rho };
            let surrogate = if rho * a < clipped * a { rho * a } else { clipped * a };
            let d = fx.ref_logprobs[i][t] - lp;
            let kl = d.exp() - d - 1.0;
            s += surrogate - fx.beta * kl;
        }
        total += s / out.len() as f64;
    }
    total / fx.outputs.len() as f64
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `(1/G) sum_i A_i (1/T_i) sum_t grad log pi(y_t | y_<t)`, returned as
/// `(adapter_grad, decoder_grad)`.
pub fn reinforce_gradient(
    adapter: &[f64],
    decoder: &[f64],
    vocab: usize,
    c: usize,
    outputs: &[Vec<usize>],
    advantages: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut ga = vec![0.0; adapter.len()];
    let mut gd = vec![0.0; decoder.len()];
    let g = outputs.len() as f64;
    for (out, a) in outputs.iter().zip(advantages) {
        let w = a / (g * out.len() as f64);
        let mut prev = BOS;
        for &y in out {
            let lp = step_logprobs(adapter, decoder, vocab, c, prev);
            for k in 0..vocab {
                let d = if k == y { 1.0 } else { 0.0 } - lp[k].exp();
                ga[c * vocab + k] += w * d;
                gd[prev * vocab + k] += w * d;
            }
            prev = y;
        }
    }
    (ga, gd)
}
