//! Synthetic report grammar and its vocabulary.
//!
//! A grammar assigns each condition `S` paraphrase templates. Reports are
//! drawn by `(condition_id, noise_id)`. The vocabulary always begins with the
//! six reserved tokens so their ids are stable across grammars.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tagged::{ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};
use super::{CorpusError, TokenSequence};

pub type TokenId = usize;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

pub const BOS_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const THINK_OPEN_ID: TokenId = 2;
pub const THINK_CLOSE_ID: TokenId = 3;
pub const ANSWER_OPEN_ID: TokenId = 4;
pub const ANSWER_CLOSE_ID: TokenId = 5;

pub const RESERVED: [&str; 6] = [BOS, EOS, THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

/// Words the synthetic teacher uses to phrase reasoning chains. None of them
/// occurs in the built-in report templates.
pub const REASONING_LEXICON: [&str; 12] = [
    "inspect", "parenchyma", "mediastinum", "pleura", ";", "impression", "verify", "consistent",
    "revisit", "earlier", "alternative", "correct",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self, CorpusError> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(CorpusError::InvalidGrammar(format!(
                    "vocabulary slot {i} must hold reserved token {r}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(CorpusError::InvalidGrammar(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::InvalidGrammar(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Reserved tokens followed by the sorted, deduplicated `words`.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self, CorpusError> {
        let body: BTreeSet<&str> = words.into_iter().filter(|w| !RESERVED.contains(w)).collect();
        let tokens = RESERVED
            .iter()
            .copied()
            .chain(body)
            .map(str::to_owned)
            .collect();
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<Vec<TokenId>, CorpusError> {
        seq.iter()
            .map(|t| self.id(t).ok_or_else(|| CorpusError::OutOfVocabulary(t.to_owned())))
            .collect()
    }

    /// Joins token strings with single spaces, skipping BOS/EOS.
    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| id != BOS_ID && id != EOS_ID)
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Self::new(tokens).map_err(serde::de::Error::custom)
    }
}

/// Condition set, paraphrase templates and vocabulary of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub name: String,
    /// One label token per condition.
    pub condition_names: Vec<String>,
    /// `templates[c][s]` is paraphrase `s` of condition `c`.
    pub templates: Vec<Vec<TokenSequence>>,
    /// Short key-finding phrase per condition, used in reasoning chains.
    pub findings: Vec<TokenSequence>,
    pub vocabulary: Vocabulary,
}

impl GrammarSpec {
    /// Builds a grammar whose vocabulary covers every template, finding,
    /// label and reasoning-lexicon token.
    pub fn new(
        name: &str,
        condition_names: &[&str],
        templates: Vec<Vec<TokenSequence>>,
        findings: Vec<TokenSequence>,
    ) -> Result<Self, CorpusError> {
        let mut words: Vec<&str> = REASONING_LEXICON.to_vec();
        words.extend(condition_names.iter().copied());
        for t in templates.iter().flatten().chain(findings.iter()) {
            words.extend(t.iter());
        }
        let vocabulary = Vocabulary::from_words(words)?;
        let spec = Self {
            name: name.to_owned(),
            condition_names: condition_names.iter().map(|s| (*s).to_owned()).collect(),
            templates,
            findings,
            vocabulary,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let c = self.templates.len();
        if c == 0 {
            return Err(CorpusError::EmptyGrammar);
        }
        if self.condition_names.len() != c || self.findings.len() != c {
            return Err(CorpusError::InvalidGrammar(format!(
                "{c} template groups but {} names and {} findings",
                self.condition_names.len(),
                self.findings.len()
            )));
        }
        let s = self.templates[0].len();
        if s == 0 || self.templates.iter().any(|t| t.len() != s) {
            return Err(CorpusError::InvalidGrammar(
                "every condition needs the same non-zero paraphrase count".into(),
            ));
        }
        let reserved_in_body = self
            .templates
            .iter()
            .flatten()
            .chain(self.findings.iter())
            .flat_map(|t| t.iter())
            .chain(self.condition_names.iter().map(String::as_str))
            .find(|t| RESERVED.contains(t));
        if let Some(t) = reserved_in_body {
            return Err(CorpusError::InvalidGrammar(format!("reserved token {t} used in grammar text")));
        }
        for t in self.templates.iter().flatten() {
            if t.is_empty() {
                return Err(CorpusError::InvalidGrammar("empty template".into()));
            }
        }
        let words = self
            .templates
            .iter()
            .flatten()
            .chain(self.findings.iter())
            .flat_map(|t| t.iter())
            .chain(self.condition_names.iter().map(String::as_str))
            .chain(REASONING_LEXICON);
        for w in words {
            if !self.vocabulary.contains(w) {
                return Err(CorpusError::InvalidGrammar(format!("token {w:?} missing from vocabulary")));
            }
        }
        Ok(())
    }

    pub fn condition_count(&self) -> usize {
        self.templates.len()
    }

    pub fn paraphrase_count(&self) -> usize {
        self.templates[0].len()
    }

    pub fn report(&self, condition_id: u32, noise_id: u32) -> Option<&TokenSequence> {
        self.templates
            .get(condition_id as usize)?
            .get(noise_id as usize)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("grammar serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = serde_json::from_str(&text)
            .map_err(|e| CorpusError::InvalidGrammar(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    /// The built-in four-condition chest-film grammar.
    pub fn builtin_default() -> Self {
        let t = |s: &str| super::tokenize(s);
        Self::new(
            "default",
            &["normal", "pneumonia", "effusion", "cardiomegaly"],
            vec![
                vec![
                    t("the lungs are clear . no acute disease ."),
                    t("lungs are clear . heart size is normal ."),
                    t("no acute cardiopulmonary process ."),
                ],
                vec![
                    t("there is a focal opacity in the right lower lobe ."),
                    t("right lower lobe opacity concerning for pneumonia ."),
                    t("focal consolidation suggests pneumonia ."),
                ],
                vec![
                    t("small left pleural effusion is present ."),
                    t("there is a left pleural effusion ."),
                    t("blunting of the left costophrenic angle ."),
                ],
                vec![
                    t("the heart is enlarged . lungs are clear ."),
                    t("cardiomegaly is present without edema ."),
                    t("enlarged cardiac silhouette ."),
                ],
            ],
            vec![
                t("unremarkable study"),
                t("airspace density basal"),
                t("meniscus sign"),
                t("ratio increased"),
            ],
        )
        .expect("built-in grammar is valid")
    }

    /// Same conditions as [`Self::builtin_default`] with disjoint report
    /// templates over an overlapping vocabulary.
    pub fn builtin_cross() -> Self {
        let t = |s: &str| super::tokenize(s);
        Self::new(
            "cross",
            &["normal", "pneumonia", "effusion", "cardiomegaly"],
            vec![
                vec![
                    t("heart and lungs are normal ."),
                    t("clear lungs without effusion ."),
                    t("normal chest radiograph ."),
                ],
                vec![
                    t("opacity in the right lower lobe ."),
                    t("pneumonia in the right lower lobe ."),
                    t("right basilar consolidation ."),
                ],
                vec![
                    t("left effusion is present ."),
                    t("small pleural effusion on the left ."),
                    t("left pleural fluid ."),
                ],
                vec![
                    t("cardiac silhouette is enlarged ."),
                    t("heart size is enlarged ."),
                    t("cardiomegaly without edema ."),
                ],
            ],
            vec![
                t("unremarkable study"),
                t("airspace density basal"),
                t("meniscus sign"),
                t("ratio increased"),
            ],
        )
        .expect("built-in grammar is valid")
    }

    /// Resolves `default`, `cross`, or a path to a grammar JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self, CorpusError> {
        match name_or_path {
            "default" => Ok(Self::builtin_default()),
            "cross" => Ok(Self::builtin_cross()),
            p => Self::load(std::path::Path::new(p)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_stable() {
        let g = GrammarSpec::builtin_default();
        let v = &g.vocabulary;
        assert_eq!(v.id(BOS), Some(BOS_ID));
        assert_eq!(v.id(EOS), Some(EOS_ID));
        assert_eq!(v.id(THINK_OPEN), Some(THINK_OPEN_ID));
        assert_eq!(v.id(THINK_CLOSE), Some(THINK_CLOSE_ID));
        assert_eq!(v.id(ANSWER_OPEN), Some(ANSWER_OPEN_ID));
        assert_eq!(v.id(ANSWER_CLOSE), Some(ANSWER_CLOSE_ID));
    }

    #[test]
    fn builtins_are_valid_and_distinct() {
        let a = GrammarSpec::builtin_default();
        let b = GrammarSpec::builtin_cross();
        assert_eq!(a.condition_count(), 4);
        assert_eq!(a.paraphrase_count(), 3);
        assert_ne!(a.hash(), b.hash());
        for (ta, tb) in a.templates.iter().flatten().zip(b.templates.iter().flatten()) {
            assert_ne!(ta, tb);
        }
        let overlap = b.vocabulary.tokens().iter().filter(|t| a.vocabulary.contains(t)).count();
        assert!(overlap > RESERVED.len() + REASONING_LEXICON.len());
    }

    #[test]
    fn reasoning_words_avoid_builtin_reports() {
        for g in [GrammarSpec::builtin_default(), GrammarSpec::builtin_cross()] {
            for t in g.templates.iter().flatten() {
                for w in t.iter() {
                    assert!(!REASONING_LEXICON.contains(&w), "{w}");
                    assert!(g.findings.iter().all(|f| !f.iter().any(|x| x == w)), "{w}");
                }
            }
        }
    }

    #[test]
    fn json_roundtrip_preserves_hash() {
        let g = GrammarSpec::builtin_default();
        let back: GrammarSpec = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back.hash(), g.hash());
    }

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(matches!(
            GrammarSpec::new("x", &[], vec![], vec![]),
            Err(CorpusError::EmptyGrammar)
        ));
        let t = TokenSequence::from_words;
        let ragged = GrammarSpec::new(
            "x",
            &["a", "b"],
            vec![vec![t(&["x"])], vec![t(&["y"]), t(&["z"])]],
            vec![t(&["f"]), t(&["g"])],
        );
        assert!(ragged.is_err());
    }

    #[test]
    fn vocabulary_rejects_missing_reserved_prefix() {
        assert!(Vocabulary::new(vec!["a".into()]).is_err());
    }

    #[test]
    fn encode_reports_oov() {
        let g = GrammarSpec::builtin_default();
        let err = g.vocabulary.encode(&TokenSequence::from_words(&["lungs", "zebra"]));
        assert!(matches!(err, Err(CorpusError::OutOfVocabulary(t)) if t == "zebra"));
    }
}
