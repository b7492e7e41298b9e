//! Seeded synthetic dataset generation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ContextKey, CorpusError, GrammarSpec, RftRecord, SftRecord};

pub const DEFAULT_PROMPT: &str = "describe the findings of this chest film .";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Sft,
    Rft,
    Eval,
}

impl Split {
    fn salt(self) -> u64 {
        match self {
            Split::Sft => 0x5f7,
            Split::Rft => 0x7f7,
            Split::Eval => 0xe4a1,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sft" => Ok(Split::Sft),
            "rft" => Ok(Split::Rft),
            "eval" => Ok(Split::Eval),
            _ => Err(CorpusError::InvalidRequest(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Generated {
    Sft(Vec<SftRecord>),
    Rft(Vec<RftRecord>),
}

impl Generated {
    pub fn len(&self) -> usize {
        match self {
            Generated::Sft(v) => v.len(),
            Generated::Rft(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_sft(self) -> Option<Vec<SftRecord>> {
        match self {
            Generated::Sft(v) => Some(v),
            Generated::Rft(_) => None,
        }
    }

    pub fn into_rft(self) -> Option<Vec<RftRecord>> {
        match self {
            Generated::Rft(v) => Some(v),
            Generated::Sft(_) => None,
        }
    }
}

/// Paraphrase ids a split may draw from. The last paraphrase is held out for
/// evaluation; training splits use the rest.
pub fn noise_range(spec: &GrammarSpec, split: Split) -> Result<std::ops::Range<u32>, CorpusError> {
    let s = spec.paraphrase_count() as u32;
    if s < 2 {
        return Err(CorpusError::InvalidRequest(
            "need at least two paraphrases to hold one out for evaluation".into(),
        ));
    }
    Ok(match split {
        Split::Sft | Split::Rft => 0..s - 1,
        Split::Eval => s - 1..s,
    })
}

/// Draws `n` records. Conditions are assigned in shuffled blocks of `C`, so
/// any `n >= C` covers every condition; paraphrases are uniform within the
/// split's noise range.
pub fn generate_synthetic_dataset(
    spec: &GrammarSpec,
    seed: u64,
    n: usize,
    split: Split,
) -> Result<Generated, CorpusError> {
    spec.validate()?;
    if n == 0 {
        return Err(CorpusError::InvalidRequest("n must be positive".into()));
    }
    let noise = noise_range(spec, split)?;
    let c = spec.condition_count() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ split.salt().rotate_left(32));
    let mut order: Vec<u32> = (0..c).collect();
    let mut contexts = Vec::with_capacity(n);
    for i in 0..n {
        if i % c as usize == 0 {
            order.shuffle(&mut rng);
        }
        let condition_id = order[i % c as usize];
        let noise_id = rng.gen_range(noise.clone());
        contexts.push(ContextKey::new(condition_id, noise_id));
    }
    let report = |k: &ContextKey| {
        spec.report(k.condition_id, k.noise_id)
            .expect("context drawn inside grammar bounds")
            .clone()
    };
    Ok(match split {
        Split::Sft | Split::Eval => Generated::Sft(
            contexts
                .iter()
                .map(|k| SftRecord {
                    context: *k,
                    prompt: DEFAULT_PROMPT.to_owned(),
                    report: report(k),
                })
                .collect(),
        ),
        Split::Rft => Generated::Rft(
            contexts
                .iter()
                .map(|k| RftRecord {
                    context: *k,
                    query: DEFAULT_PROMPT.to_owned(),
                    reference: report(k),
                })
                .collect(),
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenSequence;
    use std::collections::BTreeSet;

    fn four_by_three() -> GrammarSpec {
        let t = |w: &str| TokenSequence::from_words(&[w, "."]);
        GrammarSpec::new(
            "toy",
            &["a", "b", "c", "d"],
            (0..4)
                .map(|c| (0..3).map(|s| t(&format!("w{c}{s}"))).collect())
                .collect(),
            (0..4).map(|c| t(&format!("f{c}"))).collect(),
        )
        .unwrap()
    }

    #[test]
    fn twelve_records_cover_four_conditions() {
        let g = four_by_three();
        let recs = generate_synthetic_dataset(&g, 7, 12, Split::Sft).unwrap().into_sft().unwrap();
        assert_eq!(recs.len(), 12);
        let conds: BTreeSet<u32> = recs.iter().map(|r| r.context.condition_id).collect();
        assert_eq!(conds, (0..4).collect());
        for r in &recs {
            assert_eq!(&r.report, g.report(r.context.condition_id, r.context.noise_id).unwrap());
        }
    }

    #[test]
    fn deterministic_bytes() {
        let g = four_by_three();
        let a = generate_synthetic_dataset(&g, 7, 12, Split::Rft).unwrap();
        let b = generate_synthetic_dataset(&g, 7, 12, Split::Rft).unwrap();
        let bytes = |g: Generated| serde_json::to_string(&g.into_rft().unwrap()).unwrap();
        assert_eq!(bytes(a), bytes(b));
    }

    #[test]
    fn eval_noise_disjoint_from_training() {
        let g = four_by_three();
        let noise = |split| -> BTreeSet<u32> {
            match generate_synthetic_dataset(&g, 1, 60, split).unwrap() {
                Generated::Sft(v) => v.iter().map(|r| r.context.noise_id).collect(),
                Generated::Rft(v) => v.iter().map(|r| r.context.noise_id).collect(),
            }
        };
        let eval = noise(Split::Eval);
        assert!(eval.is_disjoint(&noise(Split::Sft)));
        assert!(eval.is_disjoint(&noise(Split::Rft)));
    }

    #[test]
    fn zero_n_is_rejected() {
        assert!(generate_synthetic_dataset(&four_by_three(), 7, 0, Split::Sft).is_err());
    }

    #[test]
    fn empty_grammar_is_rejected() {
        let mut g = four_by_three();
        g.templates.clear();
        assert!(matches!(
            generate_synthetic_dataset(&g, 7, 3, Split::Sft),
            Err(CorpusError::EmptyGrammar)
        ));
    }
}
