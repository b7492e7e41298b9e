//! Data model, tokenization, tagged-output parsing, JSONL persistence and the
//! synthetic report grammar.

mod grammar;
mod jsonl;
mod records;
mod synth;
mod tagged;
mod tokens;

use thiserror::Error;

pub use grammar::{
    GrammarSpec, TokenId, Vocabulary, ANSWER_CLOSE_ID, ANSWER_OPEN_ID, BOS, BOS_ID, EOS, EOS_ID,
    REASONING_LEXICON, RESERVED, THINK_CLOSE_ID, THINK_OPEN_ID,
};
pub use jsonl::{decode_line, load_records, persist_records};
pub use records::{
    ContextKey, CotRecord, FieldError, Record, RftRecord, RowReader, SftRecord, TraceEntry, TraceKind,
};
pub use synth::{generate_synthetic_dataset, noise_range, Generated, Split, DEFAULT_PROMPT};
pub use tagged::{
    compose_tagged, parse_tagged_output, Malformed, TaggedOutput, ANSWER_CLOSE, ANSWER_OPEN,
    THINK_CLOSE, THINK_OPEN,
};
pub use tokens::{tokenize, TokenSequence, PUNCTUATION};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid token at index {index}: {reason}")]
    InvalidToken { index: usize, reason: String },
    #[error("grammar has no conditions")]
    EmptyGrammar,
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("token {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("line {line}: field `{field}`: {reason}")]
    Row {
        line: usize,
        field: String,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
