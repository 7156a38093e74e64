//! JSON-lines readers and writers for corpora, queries, answers and results.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::index::RawDocument;

#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

/// Parses one JSON value per non-blank line. Errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R, path: &str) -> Result<Vec<T>, ReadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| ReadError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| ReadError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_jsonl_path<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, ReadError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| ReadError::Io {
        path: shown.clone(),
        source,
    })?;
    read_jsonl(BufReader::new(file), &shown)
}

/// Corpus lines are `{"_id", "title"?, "text"}`.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<RawDocument>, ReadError> {
    read_jsonl_path(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
}

pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>, ReadError> {
    read_jsonl_path(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    #[serde(rename = "_id")]
    pub id: String,
    pub answers: Vec<String>,
}

/// Gold answers keyed by query id. Repeated ids extend the answer list.
pub fn read_answers(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>, ReadError> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for rec in read_jsonl_path::<AnswerRecord>(path)? {
        out.entry(rec.id).or_default().extend(rec.answers);
    }
    Ok(out)
}

/// One ranked result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub query_id: String,
    /// 1-based.
    pub rank: usize,
    pub doc_id: String,
    pub score: f64,
}

pub fn write_results<W: Write>(mut out: W, records: &[ResultRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Rankings keyed by query id, each ordered by `rank`.
pub fn read_results(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>, ReadError> {
    let mut records: Vec<ResultRecord> = read_jsonl_path(path)?;
    records.sort_by(|a, b| a.query_id.cmp(&b.query_id).then(a.rank.cmp(&b.rank)));
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in records {
        out.entry(r.query_id).or_default().push(r.doc_id);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_lines_and_errors() {
        let body = "{\"_id\": \"d1\", \"title\": \"T\", \"text\": \"x\"}\n\n{\"_id\": \"d2\", \"text\": \"y\"}\n";
        let docs: Vec<RawDocument> = read_jsonl(body.as_bytes(), "c.jsonl").unwrap();
        assert_eq!(docs, [RawDocument::new("d1", "T", "x"), RawDocument::new("d2", "", "y")]);
        let err = read_jsonl::<RawDocument, _>("{\"_id\": \"d1\"}\n{oops}\n".as_bytes(), "c.jsonl").unwrap_err();
        assert!(err.to_string().starts_with("c.jsonl:2:"), "{err}");
        let err = read_jsonl::<RawDocument, _>("{\"text\": \"no id\"}\n".as_bytes(), "c.jsonl").unwrap_err();
        assert!(err.to_string().contains("_id"), "{err}");
    }

    #[test]
    fn results_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let recs = vec![
            ResultRecord { query_id: "q2".into(), rank: 2, doc_id: "b".into(), score: 0.5 },
            ResultRecord { query_id: "q2".into(), rank: 1, doc_id: "a".into(), score: 1.5 },
            ResultRecord { query_id: "q1".into(), rank: 1, doc_id: "c".into(), score: 0.1 },
        ];
        write_results(std::fs::File::create(&path).unwrap(), &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"query_id":"q2","rank":2,"doc_id":"b","score":0.5}"#);
        let back = read_results(&path).unwrap();
        assert_eq!(back["q2"], ["a", "b"]);
        assert_eq!(back["q1"], ["c"]);
    }

    #[test]
    fn answers_merge() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        std::fs::write(&path, "{\"_id\":\"q1\",\"answers\":[\"x\"]}\n{\"_id\":\"q1\",\"answers\":[\"y\"]}\n").unwrap();
        assert_eq!(read_answers(&path).unwrap()["q1"], ["x", "y"]);
        assert!(matches!(read_answers(dir.path().join("none")), Err(ReadError::Io { .. })));
    }
}
