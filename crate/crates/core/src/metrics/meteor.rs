//! METEOR restricted to the exact-match module.
//!
//! The alignment maximises the number of matched unigrams, then minimises the
//! number of chunks (runs contiguous in both hypothesis and reference). The
//! maximum match count is fixed by type counts; the chunk minimisation is an
//! exact branch-and-bound seeded with a greedy alignment.

use std::collections::HashMap;

use crate::corpus::TokenSequence;

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

/// Search budget for the chunk minimisation. Far above anything reached by
/// report-length inputs; if exhausted, the best alignment found so far wins.
const NODE_BUDGET: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

struct Search<'a> {
    hyp: &'a [u32],
    /// Reference positions per type id, ascending.
    positions: Vec<Vec<usize>>,
    used: Vec<bool>,
    need: Vec<usize>,
    /// Remaining hypothesis occurrences per type at or after the cursor.
    remaining: Vec<usize>,
    need_total: usize,
    /// `links_from[i]`: positions `i' >= i` whose bigram `(hyp[i'-1], hyp[i'])`
    /// occurs contiguously in the reference, i.e. where a chunk could continue.
    links_from: Vec<usize>,
    best: usize,
    nodes: usize,
}

impl Search<'_> {
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        self.nodes += 1;
        let lower = chunks + self.need_total.saturating_sub(self.links_from[i]);
        if lower >= self.best || self.nodes > NODE_BUDGET {
            return;
        }
        if i == self.hyp.len() {
            self.best = chunks;
            return;
        }
        let w = self.hyp[i] as usize;
        self.remaining[w] -= 1;
        if self.need[w] > 0 {
            self.need[w] -= 1;
            self.need_total -= 1;
            // continuing the current chunk first gives the tightest bound early
            if let Some(j) = prev.map(|p| p + 1) {
                if j < self.used.len() && !self.used[j] && self.positions[w].binary_search(&j).is_ok() {
                    self.used[j] = true;
                    self.run(i + 1, Some(j), chunks);
                    self.used[j] = false;
                }
            }
            for k in 0..self.positions[w].len() {
                let j = self.positions[w][k];
                if self.used[j] || Some(j) == prev.map(|p| p + 1) {
                    continue;
                }
                self.used[j] = true;
                self.run(i + 1, Some(j), chunks + 1);
                self.used[j] = false;
            }
            self.need[w] += 1;
            self.need_total += 1;
        }
        if self.remaining[w] >= self.need[w] {
            self.run(i + 1, None, chunks);
        }
        self.remaining[w] += 1;
    }
}

fn intern<'a>(
    seq: &'a [String],
    ids: &mut HashMap<&'a str, u32>,
) -> Vec<u32> {
    seq.iter()
        .map(|t| {
            let next = ids.len() as u32;
            *ids.entry(t.as_str()).or_insert(next)
        })
        .collect()
}

/// Greedy alignment used as the initial upper bound: each hypothesis token
/// takes the continuation of the current chunk if possible, otherwise the
/// leftmost free reference position, as long as the maximum is reachable.
fn greedy_chunks(hyp: &[u32], positions: &[Vec<usize>], need0: &[usize], types: usize) -> usize {
    let mut need = need0.to_vec();
    let mut remaining = vec![0usize; types];
    for &w in hyp {
        remaining[w as usize] += 1;
    }
    let mut used = vec![false; positions.iter().flatten().max().map_or(0, |m| m + 1)];
    let mut prev: Option<usize> = None;
    let mut chunks = 0;
    for &w in hyp {
        let w = w as usize;
        remaining[w] -= 1;
        let mut chosen = None;
        if need[w] > 0 {
            let cont = prev.map(|p| p + 1).filter(|&j| {
                j < used.len() && !used[j] && positions[w].binary_search(&j).is_ok()
            });
            chosen = cont.or_else(|| positions[w].iter().copied().find(|&j| !used[j]));
            // skip when a later occurrence could still satisfy the requirement
            // and this one would start a new chunk
            if cont.is_none() && remaining[w] >= need[w] {
                chosen = None;
            }
        }
        match chosen {
            Some(j) => {
                if prev.map(|p| p + 1) != Some(j) {
                    chunks += 1;
                }
                used[j] = true;
                need[w] -= 1;
                prev = Some(j);
            }
            None => prev = None,
        }
    }
    chunks
}

/// Maximum exact-match alignment with the fewest chunks.
pub fn align(hyp: &TokenSequence, reference: &TokenSequence) -> Alignment {
    let mut ids = HashMap::new();
    let h = intern(hyp.tokens(), &mut ids);
    let r = intern(reference.tokens(), &mut ids);
    let types = ids.len();
    let mut positions = vec![Vec::new(); types];
    for (j, &w) in r.iter().enumerate() {
        positions[w as usize].push(j);
    }
    let mut hc = vec![0usize; types];
    for &w in &h {
        hc[w as usize] += 1;
    }
    let need: Vec<usize> = (0..types).map(|w| hc[w].min(positions[w].len())).collect();
    let matches: usize = need.iter().sum();
    if matches == 0 {
        return Alignment { matches: 0, chunks: 0 };
    }
    let upper = greedy_chunks(&h, &positions, &need, types);
    let ref_bigrams: std::collections::HashSet<(u32, u32)> =
        r.windows(2).map(|p| (p[0], p[1])).collect();
    let mut links_from = vec![0usize; h.len() + 1];
    for i in (0..h.len()).rev() {
        let link = i > 0 && ref_bigrams.contains(&(h[i - 1], h[i]));
        links_from[i] = links_from[i + 1] + usize::from(link);
    }
    let mut search = Search {
        hyp: &h,
        positions,
        used: vec![false; r.len()],
        need,
        remaining: hc,
        need_total: matches,
        links_from,
        best: upper + 1,
        nodes: 0,
    };
    search.run(0, None, 0);
    Alignment {
        matches,
        chunks: search.best.min(upper),
    }
}

/// Score from alignment statistics: harmonic mean weighted 9:1 towards
/// recall, times one minus the fragmentation penalty.
pub fn meteor_from_alignment(a: Alignment, hyp_len: usize, ref_len: usize) -> f64 {
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / hyp_len as f64;
    let r = m / ref_len as f64;
    let f = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (a.chunks as f64 / m).powf(METEOR_BETA);
    f * (1.0 - penalty)
}

pub fn meteor_exact(hyp: &TokenSequence, reference: &TokenSequence) -> f64 {
    meteor_from_alignment(align(hyp, reference), hyp.len(), reference.len())
}
