//! BLEU-1..4 with one reference per hypothesis.

use super::ngram::{clipped_matches, ngram_counts, ngram_total};
use super::MetricError;
use crate::corpus::TokenSequence;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BleuMode {
    /// Micro-averaged modified precision with a corpus-level brevity penalty.
    Corpus,
    /// Mean of per-sentence scores. Orders two and up use add-one smoothing;
    /// unigram precision is left unsmoothed so disjoint pairs score zero.
    SentenceSmoothed,
}

/// BLEU-1..BLEU-4.
pub type BleuScores = [f64; MAX_ORDER];

#[derive(Debug, Clone, Copy, Default)]
struct OrderStats {
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_len: u64,
    ref_len: u64,
}

impl OrderStats {
    fn of(hyp: &TokenSequence, reference: &TokenSequence) -> Self {
        let mut s = Self {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Self::default()
        };
        for k in 0..MAX_ORDER {
            let n = k + 1;
            let h = ngram_counts(hyp.tokens(), n);
            let r = ngram_counts(reference.tokens(), n);
            s.matches[k] = clipped_matches(&h, &r);
            s.totals[k] = ngram_total(hyp.len(), n) as u64;
        }
        s
    }

    fn add(&mut self, o: &Self) {
        for k in 0..MAX_ORDER {
            self.matches[k] += o.matches[k];
            self.totals[k] += o.totals[k];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn brevity_penalty(hyp_len: u64, ref_len: u64) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0)
}

fn scores(stats: &OrderStats, smoothed: bool) -> BleuScores {
    let bp = brevity_penalty(stats.hyp_len, stats.ref_len);
    let mut out = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut alive = bp > 0.0;
    for k in 0..MAX_ORDER {
        let (m, t) = (stats.matches[k] as f64, stats.totals[k] as f64);
        let p = if smoothed && k > 0 {
            (m + 1.0) / (t + 1.0)
        } else if t > 0.0 {
            m / t
        } else {
            0.0
        };
        if p <= 0.0 {
            alive = false;
        }
        if alive {
            log_sum += p.ln();
            out[k] = bp * (log_sum / (k + 1) as f64).exp();
        }
    }
    out
}

/// Scores `hyps` against `refs` pairwise.
pub fn bleu(hyps: &[TokenSequence], refs: &[TokenSequence], mode: BleuMode) -> Result<BleuScores, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            left: hyps.len(),
            right: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricError::Empty);
    }
    match mode {
        BleuMode::Corpus => {
            let mut total = OrderStats::default();
            for (h, r) in hyps.iter().zip(refs) {
                total.add(&OrderStats::of(h, r));
            }
            Ok(scores(&total, false))
        }
        BleuMode::SentenceSmoothed => {
            let mut acc = [0.0; MAX_ORDER];
            for (h, r) in hyps.iter().zip(refs) {
                let s = scores(&OrderStats::of(h, r), true);
                for k in 0..MAX_ORDER {
                    acc[k] += s[k];
                }
            }
            let n = hyps.len() as f64;
            Ok(acc.map(|v| v / n))
        }
    }
}

/// Smoothed BLEU-1..4 of a single pair.
pub fn sentence_bleu(hyp: &TokenSequence, reference: &TokenSequence) -> BleuScores {
    scores(&OrderStats::of(hyp, reference), true)
}
