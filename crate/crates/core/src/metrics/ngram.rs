use std::collections::BTreeMap;

/// N-gram counts keyed by the space-joined tokens. Tokens never contain
/// whitespace, so the key is unambiguous.
pub(crate) fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        let key = w.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Number of `n`-grams in a sequence of length `len`.
pub(crate) fn ngram_total(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

/// Sum over n-grams of min(hyp count, ref count).
pub(crate) fn clipped_matches(hyp: &BTreeMap<String, u32>, reference: &BTreeMap<String, u32>) -> u64 {
    hyp.iter()
        .map(|(g, &c)| u64::from(c.min(reference.get(g).copied().unwrap_or(0))))
        .sum()
}
