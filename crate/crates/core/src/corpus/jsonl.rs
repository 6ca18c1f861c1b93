//! JSONL dataset interchange format: one object per line with `id`, `text`,
//! `labels` and an optional `split` field.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{Dataset, RawDocument, Split};
use crate::error::{Error, Result};
use crate::hashes::hash64;

#[derive(Deserialize)]
struct JsonlRecord {
    id: String,
    text: String,
    labels: Vec<serde_json::Value>,
    #[serde(default)]
    split: Option<Split>,
}

/// Loads, tokenizes and encodes a JSONL dataset. Documents without a `split`
/// field are assigned 70/10/20 by ranking a stable hash of their ids, so the
/// split sizes are exact up to rounding and insensitive to line order.
pub fn load_jsonl(path: &Path, min_count: usize) -> Result<Dataset> {
    let display = path.display().to_string();
    let reader = BufReader::new(std::fs::File::open(path)?);

    let mut parsed: Vec<(RawDocument, Option<Split>)> = Vec::new();
    let mut arity: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: display.clone(),
                line: lineno,
                reason: e.to_string(),
            })?;
        let labels = parse_labels(&record.labels).map_err(|reason| Error::MalformedLine {
            path: display.clone(),
            line: lineno,
            reason,
        })?;
        match arity {
            None => arity = Some(labels.len()),
            Some(expected) if expected != labels.len() => {
                return Err(Error::MalformedLine {
                    path: display,
                    line: lineno,
                    reason: format!(
                        "label arity {} does not match earlier arity {expected}",
                        labels.len()
                    ),
                });
            }
            _ => {}
        }
        let tokens = super::text::tokenize(&record.text);
        if tokens.is_empty() {
            return Err(Error::MalformedLine {
                path: display,
                line: lineno,
                reason: "document has no tokens".into(),
            });
        }
        let raw = RawDocument {
            id: record.id,
            tokens,
            labels,
            split: Split::Train, // provisional; fixed below
        };
        parsed.push((raw, record.split));
    }
    if parsed.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    assign_missing_splits(&mut parsed);
    let raw: Vec<RawDocument> = parsed
        .into_iter()
        .map(|(mut doc, split)| {
            if let Some(s) = split {
                doc.split = s;
            }
            doc
        })
        .collect();
    Dataset::assemble(raw, min_count)
}

fn parse_labels(values: &[serde_json::Value]) -> std::result::Result<Vec<u8>, String> {
    if values.is_empty() {
        return Err("labels array is empty".into());
    }
    values
        .iter()
        .map(|v| match v.as_u64() {
            Some(0) => Ok(0u8),
            Some(1) => Ok(1u8),
            _ => Err(format!("label {v} is not 0 or 1")),
        })
        .collect()
}

/// Ranks the id hashes of documents lacking an explicit split and carves the
/// ranking 70/10/20.
fn assign_missing_splits(parsed: &mut [(RawDocument, Option<Split>)]) {
    let mut unassigned: Vec<(u64, usize)> = parsed
        .iter()
        .enumerate()
        .filter(|(_, (_, s))| s.is_none())
        .map(|(i, (doc, _))| (hash64(doc.id.as_bytes()), i))
        .collect();
    if unassigned.is_empty() {
        return;
    }
    unassigned.sort_unstable();
    let n = unassigned.len();
    let n_train = n * 7 / 10;
    let n_dev = n / 10;
    for (rank, &(_, idx)) in unassigned.iter().enumerate() {
        let split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        parsed[idx].1 = Some(split);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        (dir, path)
    }

    #[test]
    fn single_line_binary_dataset() {
        let (_d, path) = write_lines(&[
            r#"{"id":"a","text":"hello world","labels":[1],"split":"train"}"#,
        ]);
        let data = load_jsonl(&path, 1).unwrap();
        assert_eq!(data.label_count, 1);
        assert_eq!(data.documents.len(), 1);
        assert_eq!(data.documents[0].tokens.len(), 2);
    }

    #[test]
    fn arity_mismatch_names_line() {
        let (_d, path) = write_lines(&[
            r#"{"id":"a","text":"x y","labels":[1,0],"split":"train"}"#,
            r#"{"id":"b","text":"x z","labels":[1],"split":"train"}"#,
        ]);
        match load_jsonl(&path, 1) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected arity error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_names_line() {
        let (_d, path) = write_lines(&[
            r#"{"id":"a","text":"x","labels":[1],"split":"train"}"#,
            r#"{"id":"b","#,
        ]);
        match load_jsonl(&path, 1) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_binary_label_rejected() {
        let (_d, path) = write_lines(&[r#"{"id":"a","text":"x","labels":[2],"split":"train"}"#]);
        assert!(matches!(
            load_jsonl(&path, 1),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn hash_split_sizes_are_exact_up_to_rounding() {
        let lines: Vec<String> = (0..100)
            .map(|i| format!(r#"{{"id":"doc-{i}","text":"alpha beta","labels":[{}]}}"#, i % 2))
            .collect();
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let (_d, path) = write_lines(&refs);
        let data = load_jsonl(&path, 1).unwrap();
        assert_eq!(data.split_len(Split::Train), 70);
        assert_eq!(data.split_len(Split::Dev), 10);
        assert_eq!(data.split_len(Split::Test), 20);

        // Assignment follows ids, not file order.
        let again = load_jsonl(&path, 1).unwrap();
        for (a, b) in data.documents.iter().zip(&again.documents) {
            assert_eq!(a.split, b.split);
        }
    }

    #[test]
    fn round_trip_through_write_jsonl() {
        let cfg = crate::corpus::SyntheticConfig {
            n_docs: 40,
            doc_len: 8,
            vocab_size: 15,
            trigger_words: vec!["zephyr".into()],
            label_rule: crate::corpus::LabelRule::AnyTrigger,
            seed: 1,
        };
        let data = crate::corpus::generate_synthetic_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("syn.jsonl");
        data.write_jsonl(&path).unwrap();
        let loaded = load_jsonl(&path, 1).unwrap();
        assert_eq!(loaded.documents.len(), data.documents.len());
        for (a, b) in data.documents.iter().zip(&loaded.documents) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.split, b.split);
            assert_eq!(
                data.vocabulary.decode(&a.tokens),
                loaded.vocabulary.decode(&b.tokens)
            );
        }
    }
}
