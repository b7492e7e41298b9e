//! CIDEr: TF-IDF weighted n-gram cosine similarity, n = 1..4, scaled by 10.

use std::collections::{BTreeMap, HashMap};

use super::ngram::ngram_counts;
use super::MetricError;
use crate::corpus::TokenSequence;

pub const CIDER_ORDERS: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

/// Document frequencies of reference n-grams, immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DfStats {
    df: [HashMap<String, u32>; CIDER_ORDERS],
    corpus_size: u32,
}

impl DfStats {
    /// Counts, for each n-gram, how many documents contain it.
    pub fn from_references(refs: &[TokenSequence]) -> Self {
        let mut df: [HashMap<String, u32>; CIDER_ORDERS] = Default::default();
        for r in refs {
            for (k, table) in df.iter_mut().enumerate() {
                for g in ngram_counts(r.tokens(), k + 1).into_keys() {
                    *table.entry(g).or_insert(0) += 1;
                }
            }
        }
        Self {
            df,
            corpus_size: refs.len() as u32,
        }
    }

    pub fn corpus_size(&self) -> u32 {
        self.corpus_size
    }

    /// Document frequency of a space-joined `n`-gram (0 when unseen).
    pub fn frequency(&self, n: usize, gram: &str) -> u32 {
        self.df[n - 1].get(gram).copied().unwrap_or(0)
    }

    /// `ln(M / df)`, with unseen n-grams treated as `df = 1`.
    pub fn idf(&self, n: usize, gram: &str) -> f64 {
        let df = self.frequency(n, gram).max(1);
        (f64::from(self.corpus_size) / f64::from(df)).ln()
    }
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Option<f64> {
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().filter_map(|(g, v)| b.get(g).map(|w| v * w)).sum();
    Some(dot / (na * nb))
}

fn as_f64(counts: &BTreeMap<String, u32>) -> BTreeMap<String, f64> {
    counts.iter().map(|(g, &c)| (g.clone(), f64::from(c))).collect()
}

/// Similarity at order `n` for one pair.
///
/// When every n-gram on both sides carries zero IDF (e.g. a single-document
/// corpus), the weighted vectors vanish and the raw count cosine is used.
pub fn cider_order(hyp: &TokenSequence, reference: &TokenSequence, n: usize, df: &DfStats) -> f64 {
    let h = ngram_counts(hyp.tokens(), n);
    let r = ngram_counts(reference.tokens(), n);
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let weigh = |counts: &BTreeMap<String, u32>| -> BTreeMap<String, f64> {
        counts
            .iter()
            .map(|(g, &c)| (g.clone(), f64::from(c) * df.idf(n, g)))
            .collect()
    };
    let (wh, wr) = (weigh(&h), weigh(&r));
    let wh_zero = wh.values().all(|&v| v == 0.0);
    let wr_zero = wr.values().all(|&v| v == 0.0);
    if wh_zero && wr_zero {
        return cosine(&as_f64(&h), &as_f64(&r)).unwrap_or(0.0);
    }
    cosine(&wh, &wr).unwrap_or(0.0)
}

/// CIDEr of one pair: `10 * mean_n sim_n`.
pub fn cider_pair(hyp: &TokenSequence, reference: &TokenSequence, df: &DfStats) -> f64 {
    let s: f64 = (1..=CIDER_ORDERS).map(|n| cider_order(hyp, reference, n, df)).sum();
    CIDER_SCALE * s / CIDER_ORDERS as f64
}

/// Corpus CIDEr: mean of per-pair scores.
pub fn cider(hyps: &[TokenSequence], refs: &[TokenSequence], df: &DfStats) -> Result<f64, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            left: hyps.len(),
            right: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricError::Empty);
    }
    if df.corpus_size == 0 {
        return Err(MetricError::EmptyCorpusStats);
    }
    let total: f64 = hyps.iter().zip(refs).map(|(h, r)| cider_pair(h, r, df)).sum();
    Ok(total / hyps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> TokenSequence {
        crate::corpus::tokenize(s)
    }

    #[test]
    fn single_pair_identical_is_ten() {
        let x = t("a b c d e");
        let df = DfStats::from_references(std::slice::from_ref(&x));
        assert!((cider(&[x.clone()], &[x], &df).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        let r = t("a b c d");
        let df = DfStats::from_references(std::slice::from_ref(&r));
        assert_eq!(cider(&[t("w x y z")], &[r], &df).unwrap(), 0.0);
    }

    #[test]
    fn shared_unigram_has_zero_idf() {
        let refs = [t("the cat"), t("the dog")];
        let df = DfStats::from_references(&refs);
        assert_eq!(df.frequency(1, "the"), 2);
        assert_eq!(df.idf(1, "the"), 0.0);
        assert!((df.idf(1, "cat") - 2f64.ln()).abs() < 1e-15);
        // "the" alone carries nothing; with "cat" the unigram cosine is exact
        let only_the = cider_order(&t("the bird"), &refs[0], 1, &df);
        assert_eq!(only_the, 0.0);
        let v = cider_order(&t("the cat"), &refs[0], 1, &df);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unseen_ngram_gets_log_m() {
        let df = DfStats::from_references(&[t("a"), t("b"), t("c")]);
        assert!((df.idf(1, "zzz") - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_stats_rejected() {
        let df = DfStats::from_references(&[]);
        assert!(matches!(
            cider(&[t("a")], &[t("a")], &df),
            Err(MetricError::EmptyCorpusStats)
        ));
    }

    #[test]
    fn frequencies_bounded_by_corpus_size() {
        let refs = [t("a a b"), t("a c"), t("b b b")];
        let df = DfStats::from_references(&refs);
        for table in &df.df {
            for &f in table.values() {
                assert!(f >= 1 && f <= df.corpus_size());
            }
        }
        assert_eq!(df.frequency(1, "a"), 2);
        assert_eq!(df.frequency(2, "b b"), 1);
    }
}
