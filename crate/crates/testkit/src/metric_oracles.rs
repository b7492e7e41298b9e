//! Exhaustive reference implementations of the caption metrics.
//!
//! These use plain vectors and linear scans throughout; nothing is shared
//! with the library's hashing n-gram counters.

fn grams(s: &[String], n: usize) -> Vec<&[String]> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| &s[i..i + n]).collect()
}

fn count(haystack: &[&[String]], needle: &[String]) -> usize {
    haystack.iter().filter(|g| **g == needle).count()
}

fn distinct<'a>(gs: &[&'a [String]]) -> Vec<&'a [String]> {
    let mut out: Vec<&[String]> = Vec::new();
    for g in gs {
        if !out.contains(g) {
            out.push(g);
        }
    }
    out
}

/// Corpus BLEU-1..4 by exhaustive clipped counting.
pub fn bleu_corpus(hyps: &[Vec<String>], refs: &[Vec<String>]) -> [f64; 4] {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let hg = grams(h, n);
            let rg = grams(rf, n);
            totals[n - 1] += hg.len();
            for g in distinct(&hg) {
                matches[n - 1] += count(&hg, g).min(count(&rg, g));
            }
        }
    }
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut out = [0.0; 4];
    for n in 1..=4 {
        let mut prod = 1.0;
        let mut zero = false;
        for k in 0..n {
            if totals[k] == 0 || matches[k] == 0 {
                zero = true;
                break;
            }
            prod *= matches[k] as f64 / totals[k] as f64;
        }
        out[n - 1] = if zero { 0.0 } else { bp * prod.powf(1.0 / n as f64) };
    }
    out
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == *x))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
/// Exponential in `a.len()`; intended for lengths up to about 12.
pub fn lcs_exhaustive(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16, "exhaustive LCS oracle limited to short inputs");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(hyp: &[String], reference: &[String]) -> f64 {
    let l = lcs_exhaustive(hyp, reference);
    if l == 0 {
        return 0.0;
    }
    let r = l as f64 / reference.len() as f64;
    let p = l as f64 / hyp.len() as f64;
    let b2 = 1.2f64 * 1.2;
    (1.0 + b2) * r * p / (r + b2 * p)
}

/// Best (max matches, then min chunks) over every injective exact-match
/// alignment.
pub fn meteor_alignment(hyp: &[String], reference: &[String]) -> (usize, usize) {
    fn chunks_of(pairs: &[(usize, usize)]) -> usize {
        let mut sorted = pairs.to_vec();
        sorted.sort();
        let mut chunks = 0;
        for (k, &(i, j)) in sorted.iter().enumerate() {
            if k == 0 || sorted[k - 1] != (i.wrapping_sub(1), j.wrapping_sub(1)) {
                chunks += 1;
            }
        }
        chunks
    }
    fn rec(
        i: usize,
        hyp: &[String],
        reference: &[String],
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == hyp.len() {
            let m = pairs.len();
            let ch = chunks_of(pairs);
            if m > best.0 || (m == best.0 && ch < best.1) {
                *best = (m, ch);
            }
            return;
        }
        rec(i + 1, hyp, reference, used, pairs, best);
        for j in 0..reference.len() {
            if !used[j] && reference[j] == hyp[i] {
                used[j] = true;
                pairs.push((i, j));
                rec(i + 1, hyp, reference, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    rec(0, hyp, reference, &mut vec![false; reference.len()], &mut Vec::new(), &mut best);
    best
}

pub fn meteor(hyp: &[String], reference: &[String]) -> f64 {
    let (m, ch) = meteor_alignment(hyp, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    f * (1.0 - 0.5 * (ch as f64 / m as f64).powi(3))
}

/// Corpus CIDEr recomputed with dense vectors over the pair's n-gram union.
/// Document frequency is counted by scanning every reference. When both
/// weighted vectors vanish the raw count cosine is used.
pub fn cider(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let m = refs.len() as f64;
    let mut total = 0.0;
    for (h, r) in hyps.iter().zip(refs) {
        let mut sims = 0.0;
        for n in 1..=4 {
            let hg = grams(h, n);
            let rg = grams(r, n);
            if hg.is_empty() || rg.is_empty() {
                continue;
            }
            let mut union = distinct(&hg);
            for g in distinct(&rg) {
                if !union.contains(&g) {
                    union.push(g);
                }
            }
            let idf: Vec<f64> = union
                .iter()
                .map(|g| {
                    let df = refs.iter().filter(|d| grams(d, n).contains(g)).count().max(1);
                    (m / df as f64).ln()
                })
                .collect();
            let th: Vec<f64> = union.iter().map(|g| count(&hg, g) as f64).collect();
            let tr: Vec<f64> = union.iter().map(|g| count(&rg, g) as f64).collect();
            let vh: Vec<f64> = th.iter().zip(&idf).map(|(a, b)| a * b).collect();
            let vr: Vec<f64> = tr.iter().zip(&idf).map(|(a, b)| a * b).collect();
            let cos = |a: &[f64], b: &[f64]| {
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    None
                } else {
                    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
                }
            };
            let hz = vh.iter().all(|&v| v == 0.0);
            let rz = vr.iter().all(|&v| v == 0.0);
            sims += if hz && rz {
                cos(&th, &tr).unwrap_or(0.0)
            } else {
                cos(&vh, &vr).unwrap_or(0.0)
            };
        }
        total += 10.0 * sims / 4.0;
    }
    total / hyps.len() as f64
}

/// AUC as the share of positive/negative pairs ranked correctly, ties half.
pub fn auc_pairs(labels: &[bool], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}
