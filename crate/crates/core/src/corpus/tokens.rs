//! Report tokenization shared by metrics, losses and rewards.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Characters that always become standalone tokens.
pub const PUNCTUATION: [char; 8] = ['.', ',', ';', ':', '!', '?', '(', ')'];

fn is_punct(c: char) -> bool {
    PUNCTUATION.contains(&c)
}

/// An ordered list of normalized tokens.
///
/// Every token is non-empty and free of whitespace. The sequence itself may
/// be empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Result<Self, CorpusError> {
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(CorpusError::InvalidToken {
                    index: i,
                    reason: "empty token".into(),
                });
            }
            if t.chars().any(char::is_whitespace) {
                return Err(CorpusError::InvalidToken {
                    index: i,
                    reason: format!("token {t:?} contains whitespace"),
                });
            }
        }
        Ok(Self(tokens))
    }

    /// Builds a sequence from string slices, panicking on invalid tokens.
    /// Intended for literals in tests and built-in grammars.
    pub fn from_words(words: &[&str]) -> Self {
        Self::new(words.iter().map(|w| (*w).to_owned()).collect()).expect("valid literal tokens")
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// Tokens joined by single spaces.
    pub fn join(&self) -> String {
        self.0.join(" ")
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl TryFrom<Vec<String>> for TokenSequence {
    type Error = CorpusError;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<TokenSequence> for Vec<String> {
    fn from(s: TokenSequence) -> Self {
        s.0
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.join())
    }
}

/// Lowercases `text`, isolates the punctuation characters `. , ; : ! ? ( )`
/// and splits the rest on whitespace runs.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if is_punct(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else {
            cur.extend(c.to_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    TokenSequence(out)
}
