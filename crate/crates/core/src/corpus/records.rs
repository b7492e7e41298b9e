//! Dataset rows for the three training stages and their JSONL decoding.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::TokenSequence;

/// Symbolic stand-in for the image input: which condition, which paraphrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextKey {
    pub condition_id: u32,
    pub noise_id: u32,
}

impl ContextKey {
    pub fn new(condition_id: u32, noise_id: u32) -> Self {
        Self { condition_id, noise_id }
    }

    /// Rendering used inside prompts, e.g. `condition=2 noise=1`.
    pub fn describe(&self) -> String {
        format!("condition={} noise={}", self.condition_id, self.noise_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SftRecord {
    #[serde(flatten)]
    pub context: ContextKey,
    pub prompt: String,
    pub report: TokenSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Init,
    Explore,
    Backtrack,
    Verify,
    Correct,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Init => "init",
            TraceKind::Explore => "explore",
            TraceKind::Backtrack => "backtrack",
            TraceKind::Verify => "verify",
            TraceKind::Correct => "correct",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "init" => TraceKind::Init,
            "explore" => TraceKind::Explore,
            "backtrack" => TraceKind::Backtrack,
            "verify" => TraceKind::Verify,
            "correct" => TraceKind::Correct,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub strategy: TraceKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CotRecord {
    #[serde(flatten)]
    pub context: ContextKey,
    pub chain: String,
    pub answer: TokenSequence,
    pub trace: Vec<TraceEntry>,
    pub verified_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RftRecord {
    #[serde(flatten)]
    pub context: ContextKey,
    pub query: String,
    pub reference: TokenSequence,
}

impl From<&SftRecord> for RftRecord {
    fn from(r: &SftRecord) -> Self {
        Self {
            context: r.context,
            query: r.prompt.clone(),
            reference: r.report.clone(),
        }
    }
}

/// A decoding failure attributed to one field of a JSON row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl FieldError {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        Self {
            field: field.to_owned(),
            reason: reason.into(),
        }
    }
}

/// Field-by-field reader over a JSON object that tracks which keys were
/// consumed so unknown keys can be rejected.
pub struct RowReader {
    map: Map<String, Value>,
}

impl RowReader {
    pub fn new(map: Map<String, Value>) -> Self {
        Self { map }
    }

    fn take(&mut self, field: &str) -> Result<Value, FieldError> {
        self.map
            .remove(field)
            .ok_or_else(|| FieldError::new(field, "missing field"))
    }

    pub fn u32(&mut self, field: &str) -> Result<u32, FieldError> {
        self.take(field)?
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| FieldError::new(field, "expected non-negative 32-bit integer"))
    }

    pub fn f64(&mut self, field: &str) -> Result<f64, FieldError> {
        let v = self
            .take(field)?
            .as_f64()
            .ok_or_else(|| FieldError::new(field, "expected number"))?;
        if !v.is_finite() {
            return Err(FieldError::new(field, "expected finite number"));
        }
        Ok(v)
    }

    pub fn string(&mut self, field: &str) -> Result<String, FieldError> {
        match self.take(field)? {
            Value::String(s) => Ok(s),
            _ => Err(FieldError::new(field, "expected string")),
        }
    }

    pub fn tokens(&mut self, field: &str) -> Result<TokenSequence, FieldError> {
        let v = self.take(field)?;
        let arr = v
            .as_array()
            .ok_or_else(|| FieldError::new(field, "expected array of strings"))?;
        let words = arr
            .iter()
            .map(|x| x.as_str().map(str::to_owned))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| FieldError::new(field, "expected array of strings"))?;
        TokenSequence::new(words).map_err(|e| FieldError::new(field, e.to_string()))
    }

    pub fn context(&mut self) -> Result<ContextKey, FieldError> {
        Ok(ContextKey {
            condition_id: self.u32("condition_id")?,
            noise_id: self.u32("noise_id")?,
        })
    }

    pub fn trace(&mut self, field: &str) -> Result<Vec<TraceEntry>, FieldError> {
        let v = self.take(field)?;
        let arr = v
            .as_array()
            .ok_or_else(|| FieldError::new(field, "expected array"))?;
        arr.iter()
            .enumerate()
            .map(|(i, e)| {
                let obj = e
                    .as_object()
                    .ok_or_else(|| FieldError::new(field, format!("entry {i}: expected object")))?;
                let strategy = obj
                    .get("strategy")
                    .and_then(Value::as_str)
                    .and_then(TraceKind::parse)
                    .ok_or_else(|| FieldError::new(&format!("{field}[{i}].strategy"), "unknown strategy"))?;
                let text = obj
                    .get("text")
                    .and_then(Value::as_str)
                    .ok_or_else(|| FieldError::new(&format!("{field}[{i}].text"), "expected string"))?;
                if obj.len() != 2 {
                    return Err(FieldError::new(field, format!("entry {i}: unexpected keys")));
                }
                Ok(TraceEntry {
                    strategy,
                    text: text.to_owned(),
                })
            })
            .collect()
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<(), FieldError> {
        match self.map.keys().next() {
            Some(k) => Err(FieldError::new(k, "unknown field")),
            None => Ok(()),
        }
    }
}

/// A row type that can be written to and read from JSONL.
pub trait Record: Serialize + Sized {
    fn decode(row: &mut RowReader) -> Result<Self, FieldError>;
}

impl Record for SftRecord {
    fn decode(row: &mut RowReader) -> Result<Self, FieldError> {
        let context = row.context()?;
        let prompt = row.string("prompt")?;
        let report = row.tokens("report")?;
        if report.is_empty() {
            return Err(FieldError::new("report", "must be non-empty"));
        }
        Ok(Self { context, prompt, report })
    }
}

impl Record for CotRecord {
    fn decode(row: &mut RowReader) -> Result<Self, FieldError> {
        let context = row.context()?;
        let chain = row.string("chain")?;
        let answer = row.tokens("answer")?;
        let trace = row.trace("trace")?;
        let verified_score = row.f64("verified_score")?;
        Ok(Self {
            context,
            chain,
            answer,
            trace,
            verified_score,
        })
    }
}

impl Record for RftRecord {
    fn decode(row: &mut RowReader) -> Result<Self, FieldError> {
        let context = row.context()?;
        let query = row.string("query")?;
        let reference = row.tokens("reference")?;
        if reference.is_empty() {
            return Err(FieldError::new("reference", "must be non-empty"));
        }
        Ok(Self { context, query, reference })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sft_wire_field_names() {
        let r = SftRecord {
            context: ContextKey::new(1, 2),
            prompt: "p".into(),
            report: TokenSequence::from_words(&["a", "."]),
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"condition_id":1,"noise_id":2,"prompt":"p","report":["a","."]}"#
        );
    }

    #[test]
    fn cot_wire_field_names() {
        let r = CotRecord {
            context: ContextKey::new(0, 0),
            chain: "c".into(),
            answer: TokenSequence::from_words(&["a"]),
            trace: vec![TraceEntry {
                strategy: TraceKind::Backtrack,
                text: "t".into(),
            }],
            verified_score: 0.5,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"condition_id":0,"noise_id":0,"chain":"c","answer":["a"],"trace":[{"strategy":"backtrack","text":"t"}],"verified_score":0.5}"#
        );
    }

    #[test]
    fn rft_wire_field_names() {
        let r = RftRecord {
            context: ContextKey::new(3, 0),
            query: "q".into(),
            reference: TokenSequence::from_words(&["x"]),
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"condition_id":3,"noise_id":0,"query":"q","reference":["x"]}"#
        );
    }

    #[test]
    fn reader_names_offending_field() {
        let v: Value = serde_json::from_str(r#"{"condition_id":1,"noise_id":-1,"prompt":"p","report":["a"]}"#).unwrap();
        let mut r = RowReader::new(v.as_object().unwrap().clone());
        let err = SftRecord::decode(&mut r).unwrap_err();
        assert_eq!(err.field, "noise_id");
    }
}
