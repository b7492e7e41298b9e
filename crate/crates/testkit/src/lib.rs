//! Test support for cotforge: brute-force oracles that stay independent of
//! the library's implementation paths, and random instance generators.

pub mod metric_oracles;
pub mod policy_oracles;

use rand::Rng;

/// Random token sentence over a small alphabet so n-grams collide often.
pub fn random_sentence<R: Rng>(rng: &mut R, alphabet: usize, max_len: usize) -> Vec<String> {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| format!("w{}", rng.gen_range(0..alphabet)))
        .collect()
}

pub fn seq(tokens: &[String]) -> cotforge::corpus::TokenSequence {
    cotforge::corpus::TokenSequence::new(tokens.to_vec()).expect("oracle tokens are valid")
}
