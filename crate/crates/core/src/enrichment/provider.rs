//! The proposal/judging backend abstraction and its deterministic stub.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Which prompt a request was rendered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    /// Anticipated search vocabulary for a document.
    Corpus,
    /// Expected-response sketch for a query.
    Query,
    /// 0-100 relevance judgement of a (query, document) pair.
    Relevance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderRequest {
    pub kind: PromptKind,
    /// Document id (corpus side), query id (query side), or
    /// `"{query_id}::{doc_id}"` for relevance judgements.
    pub subject_id: String,
    pub prompt: String,
    pub max_phrases: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("network error: {0}")]
    Network(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unparseable reply: {0}")]
    Parse(String),
    #[error("provider configuration error: {0}")]
    Config(String),
}

impl ProviderError {
    /// Transport-level failures that may succeed on retry.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Network(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            ProviderError::Parse(_) | ProviderError::Config(_) => false,
        }
    }
}

/// A text-completion backend. Replies are raw text; callers parse them
/// with [`parse_phrases`] or [`crate::rerank::parse_judgement`].
pub trait Provider: Send + Sync {
    /// Stable identifier recorded in reports.
    fn id(&self) -> String;

    fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

/// Extracts the first well-formed JSON array of strings embedded in `reply`.
/// Entries are trimmed, blanks dropped, and the list capped at `max_phrases`.
pub fn parse_phrases(reply: &str, max_phrases: usize) -> Result<Vec<String>, ProviderError> {
    for (start, _) in reply.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&reply[start..]).into_iter::<Value>();
        let Some(Ok(Value::Array(items))) = stream.next() else {
            continue;
        };
        let phrases: Option<Vec<String>> = items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Some(s),
                _ => None,
            })
            .collect();
        let Some(phrases) = phrases else {
            continue;
        };
        return Ok(phrases
            .into_iter()
            .map(|s| s.trim().to_owned())
            .filter(|s| !s.is_empty())
            .take(max_phrases)
            .collect());
    }
    Err(ProviderError::Parse(format!(
        "no JSON array of strings in reply: {}",
        truncate_for_log(reply)
    )))
}

pub(crate) fn truncate_for_log(s: &str) -> String {
    const MAX: usize = 200;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_owned(),
    }
}

/// A scripted reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StubReply {
    /// Phrase list, replied as a JSON array.
    Phrases(Vec<String>),
    /// Relevance score, replied as `{"score": n}`.
    Score(i64),
    /// Replied verbatim.
    Raw(String),
}

impl StubReply {
    fn render(&self) -> String {
        match self {
            StubReply::Phrases(p) => serde_json::to_string(p).expect("string list serializes"),
            StubReply::Score(n) => format!("{{\"score\": {n}}}"),
            StubReply::Raw(s) => s.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StubError {
    #[error("failed to read stub script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed stub script {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Deterministic provider replaying a script keyed by subject id. Relevance
/// requests fall back from `"{query_id}::{doc_id}"` to the bare doc id.
/// Unknown subjects get an empty phrase list.
#[derive(Debug, Clone, PartialEq)]
pub struct StubProvider {
    name: String,
    script: BTreeMap<String, StubReply>,
}

impl StubProvider {
    pub fn new(name: impl Into<String>, script: BTreeMap<String, StubReply>) -> Self {
        Self {
            name: name.into(),
            script,
        }
    }

    /// Phrase-only script.
    pub fn from_phrases<I, K, P>(name: impl Into<String>, entries: I) -> Self
    where
        I: IntoIterator<Item = (K, Vec<P>)>,
        K: Into<String>,
        P: Into<String>,
    {
        let script = entries
            .into_iter()
            .map(|(k, v)| (k.into(), StubReply::Phrases(v.into_iter().map(Into::into).collect())))
            .collect();
        Self::new(name, script)
    }

    /// Script body: a JSON object mapping subject id to a string array, an
    /// integer score, or a raw reply string.
    pub fn from_json_str(name: impl Into<String>, json: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(name, serde_json::from_str(json)?))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, StubError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let body = std::fs::read_to_string(path).map_err(|source| StubError::Io {
            path: shown.clone(),
            source,
        })?;
        let name = path
            .file_name()
            .map_or_else(|| shown.clone(), |f| f.to_string_lossy().into_owned());
        Self::from_json_str(name, &body).map_err(|source| StubError::Json { path: shown, source })
    }

    fn lookup(&self, request: &ProviderRequest) -> Option<&StubReply> {
        self.script.get(&request.subject_id).or_else(|| {
            if request.kind != PromptKind::Relevance {
                return None;
            }
            let (_, doc) = request.subject_id.split_once("::")?;
            self.script.get(doc)
        })
    }
}

impl Provider for StubProvider {
    fn id(&self) -> String {
        format!("stub:{}", self.name)
    }

    fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        Ok(self.lookup(request).map_or_else(|| "[]".to_owned(), StubReply::render))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(kind: PromptKind, subject: &str) -> ProviderRequest {
        ProviderRequest {
            kind,
            subject_id: subject.into(),
            prompt: String::new(),
            max_phrases: 16,
        }
    }

    #[test]
    fn parse_plain_array() {
        assert_eq!(parse_phrases(r#"["term a","term b"]"#, 16).unwrap(), ["term a", "term b"]);
    }

    #[test]
    fn parse_array_inside_prose() {
        let reply = "Sure! [not json here] Here you go:\n```json\n[\"x ray\", \" \", \"mri\"]\n```";
        assert_eq!(parse_phrases(reply, 16).unwrap(), ["x ray", "mri"]);
    }

    #[test]
    fn parse_skips_non_string_arrays() {
        assert_eq!(parse_phrases(r#"[1, 2] then ["ok"]"#, 16).unwrap(), ["ok"]);
    }

    #[test]
    fn parse_caps_count() {
        assert_eq!(parse_phrases(r#"["a","b","c"]"#, 2).unwrap(), ["a", "b"]);
    }

    #[test]
    fn parse_failure_is_an_error() {
        assert!(matches!(parse_phrases("relevance high", 16), Err(ProviderError::Parse(_))));
        assert!(matches!(parse_phrases("[\"unterminated", 16), Err(ProviderError::Parse(_))));
        assert_eq!(parse_phrases("[]", 16).unwrap(), Vec::<String>::new());
    }

    #[test]
    fn stub_replays_script() {
        let stub = StubProvider::from_json_str(
            "s",
            r#"{"d1": ["Diagnostic accuracy", "x"], "q1::d2": 70, "d3": 15, "raw": "{\"score\": 5}"}"#,
        )
        .unwrap();
        let reply = stub.complete(&request(PromptKind::Corpus, "d1")).unwrap();
        assert_eq!(parse_phrases(&reply, 16).unwrap(), ["Diagnostic accuracy", "x"]);
        assert_eq!(stub.complete(&request(PromptKind::Corpus, "zzz")).unwrap(), "[]");
        assert_eq!(
            stub.complete(&request(PromptKind::Relevance, "q1::d2")).unwrap(),
            r#"{"score": 70}"#
        );
        assert_eq!(
            stub.complete(&request(PromptKind::Relevance, "q9::d3")).unwrap(),
            r#"{"score": 15}"#
        );
        // doc-id fallback is only for relevance requests
        assert_eq!(stub.complete(&request(PromptKind::Query, "q9::d3")).unwrap(), "[]");
        assert_eq!(stub.id(), "stub:s");
    }

    #[test]
    fn malformed_script_fails_to_load() {
        assert!(StubProvider::from_json_str("s", "[1,2]").is_err());
        assert!(StubProvider::from_json_str("s", r#"{"a": [1]}"#).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(StubProvider::from_path(&path), Err(StubError::Json { .. })));
        assert!(matches!(
            StubProvider::from_path(dir.path().join("missing.json")),
            Err(StubError::Io { .. })
        ));
    }

    #[test]
    fn retryability() {
        assert!(ProviderError::Network("x".into()).is_retryable());
        assert!(ProviderError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(ProviderError::Status { status: 429, body: String::new() }.is_retryable());
        assert!(!ProviderError::Status { status: 400, body: String::new() }.is_retryable());
        assert!(!ProviderError::Parse("x".into()).is_retryable());
    }
}
