//! JSONL persistence for dataset rows.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use super::records::{Record, RowReader};
use super::CorpusError;

/// Writes one JSON object per line, UTF-8, `\n`-terminated.
pub fn persist_records<R: Record>(path: &Path, records: &[R]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CorpusError::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`persist_records`]. Blank lines are skipped.
pub fn load_records<R: Record>(path: &Path) -> Result<Vec<R>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn decode_line<R: Record>(line: &str, line_no: usize) -> Result<R, CorpusError> {
    let row_err = |field: &str, reason: String| CorpusError::Row {
        line: line_no,
        field: field.to_owned(),
        reason,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| row_err("<row>", e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(row_err("<row>", "expected a JSON object".into()));
    };
    let mut reader = RowReader::new(map);
    let rec = R::decode(&mut reader).map_err(|e| row_err(&e.field, e.reason))?;
    reader.finish().map_err(|e| row_err(&e.field, e.reason))?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        generate_synthetic_dataset, ContextKey, CotRecord, GrammarSpec, RftRecord, SftRecord, Split,
        TokenSequence, TraceEntry, TraceKind,
    };
    use proptest::prelude::*;

    #[test]
    fn generated_dataset_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let g = GrammarSpec::builtin_default();
        let recs = generate_synthetic_dataset(&g, 3, 20, Split::Sft).unwrap().into_sft().unwrap();
        let p = dir.path().join("sft.jsonl");
        persist_records(&p, &recs).unwrap();
        assert_eq!(load_records::<SftRecord>(&p).unwrap(), recs);

        let rft = generate_synthetic_dataset(&g, 3, 20, Split::Rft).unwrap().into_rft().unwrap();
        let p = dir.path().join("rft.jsonl");
        persist_records(&p, &rft).unwrap();
        assert_eq!(load_records::<RftRecord>(&p).unwrap(), rft);
    }

    #[test]
    fn missing_field_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(
            &p,
            "{\"condition_id\":0,\"noise_id\":0,\"prompt\":\"p\",\"report\":[\"a\"]}\n\
             {\"condition_id\":0,\"noise_id\":0,\"prompt\":\"p\"}\n",
        )
        .unwrap();
        match load_records::<SftRecord>(&p) {
            Err(CorpusError::Row { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "report");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = decode_line::<RftRecord>(
            r#"{"condition_id":0,"noise_id":0,"query":"q","reference":["a"],"extra":1}"#,
            7,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Row { line: 7, ref field, .. } if field == "extra"));
    }

    #[test]
    fn garbage_line_is_attributed() {
        let err = decode_line::<SftRecord>("not json", 3).unwrap_err();
        assert!(matches!(err, CorpusError::Row { line: 3, .. }));
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_records::<CotRecord>(&p).unwrap().is_empty());
    }

    fn token() -> impl Strategy<Value = String> {
        "[a-z.,;]{1,6}"
    }

    fn tokens() -> impl Strategy<Value = TokenSequence> {
        prop::collection::vec(token(), 1..8).prop_map(|v| TokenSequence::new(v).unwrap())
    }

    fn kind() -> impl Strategy<Value = TraceKind> {
        prop_oneof![
            Just(TraceKind::Init),
            Just(TraceKind::Explore),
            Just(TraceKind::Backtrack),
            Just(TraceKind::Verify),
            Just(TraceKind::Correct),
        ]
    }

    fn cot() -> impl Strategy<Value = CotRecord> {
        (
            0u32..100,
            0u32..100,
            "\\PC{1,40}",
            tokens(),
            prop::collection::vec((kind(), "\\PC{0,40}"), 0..6),
            -1e6f64..1e6,
        )
            .prop_map(|(c, n, chain, answer, trace, score)| CotRecord {
                context: ContextKey::new(c, n),
                chain,
                answer,
                trace: trace
                    .into_iter()
                    .map(|(strategy, text)| TraceEntry { strategy, text })
                    .collect(),
                verified_score: score,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cot_records_roundtrip(recs in prop::collection::vec(cot(), 0..5)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("cot.jsonl");
            persist_records(&p, &recs).unwrap();
            prop_assert_eq!(load_records::<CotRecord>(&p).unwrap(), recs);
        }

        #[test]
        fn sft_records_roundtrip(
            rows in prop::collection::vec((0u32..9, 0u32..9, "\\PC{0,30}", tokens()), 0..5)
        ) {
            let recs: Vec<SftRecord> = rows
                .into_iter()
                .map(|(c, n, prompt, report)| SftRecord { context: ContextKey::new(c, n), prompt, report })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("sft.jsonl");
            persist_records(&p, &recs).unwrap();
            prop_assert_eq!(load_records::<SftRecord>(&p).unwrap(), recs);
        }
    }
}
