//! Text normalization shared by documents, queries and enrichment phrases.
//!
//! The pipeline is NFKD, lowercase, split on non-alphanumeric characters,
//! drop stopwords (tested on the surface form), then Porter-stem. Combining
//! marks exposed by NFKD are dropped inside a word rather than splitting it,
//! so `café` and `cafe` produce the same token.

mod porter;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

pub use porter::stem;

/// Separator used when joining stems into a canonical n-gram string.
pub const NGRAM_SEPARATOR: char = ' ';

const DEFAULT_STOPWORDS: &str = include_str!("stopwords_en.txt");

/// An ordered list of stems.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct TokenStream(Vec<String>);

impl TokenStream {
    pub fn new(tokens: Vec<String>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    /// Canonical form: stems joined by a single space.
    pub fn canonical(&self) -> String {
        join_canonical(&self.0)
    }
}

impl fmt::Display for TokenStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl From<Vec<String>> for TokenStream {
    fn from(tokens: Vec<String>) -> Self {
        Self(tokens)
    }
}

pub fn join_canonical<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(NGRAM_SEPARATOR);
        }
        out.push_str(t.as_ref());
    }
    out
}

/// NFKD followed by lowercasing, with combining marks removed. This is the
/// text-level normalization used by the tokenizer and by answer matching.
pub fn normalize(text: &str) -> String {
    if text.is_ascii() {
        return text.to_ascii_lowercase();
    }
    text.nfkd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .filter(|c| !is_combining_mark(*c))
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum StopwordError {
    #[error("failed to read stopword file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Tokenizer with a fixed stopword set. Cloning is cheap.
#[derive(Clone)]
pub struct Tokenizer {
    stopwords: Arc<HashSet<String>>,
}

impl fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tokenizer")
            .field("stopwords", &self.stopwords.len())
            .finish()
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::from_stopword_list(DEFAULT_STOPWORDS)
    }
}

impl Tokenizer {
    pub fn new(stopwords: impl IntoIterator<Item = String>) -> Self {
        let stopwords = stopwords
            .into_iter()
            .map(|w| normalize(w.trim()))
            .filter(|w| !w.is_empty())
            .collect();
        Self {
            stopwords: Arc::new(stopwords),
        }
    }

    /// Parses the one-word-per-line stopword format. Blank lines are ignored.
    pub fn from_stopword_list(contents: &str) -> Self {
        Self::new(contents.lines().map(str::to_owned))
    }

    pub fn from_stopword_file(path: impl AsRef<Path>) -> Result<Self, StopwordError> {
        let path = path.as_ref();
        let contents = std::fs::read_to_string(path).map_err(|source| StopwordError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_stopword_list(&contents))
    }

    /// Stopwords in sorted order.
    pub fn stopwords(&self) -> Vec<&str> {
        let mut words: Vec<&str> = self.stopwords.iter().map(String::as_str).collect();
        words.sort_unstable();
        words
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    pub fn tokenize(&self, text: &str) -> TokenStream {
        let normalized = normalize(text);
        let tokens = normalized
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty() && !self.stopwords.contains(*w))
            .map(stem)
            .filter(|s| !s.is_empty())
            .collect();
        TokenStream(tokens)
    }
}

/// Every contiguous window of `min_n..=max_n` tokens, position-major then
/// length, joined canonically.
pub fn shingle<S: AsRef<str>>(tokens: &[S], min_n: usize, max_n: usize) -> Vec<String> {
    assert!(min_n >= 1 && min_n <= max_n, "invalid n-gram range {min_n}..={max_n}");
    let mut out = Vec::new();
    for start in 0..tokens.len() {
        for n in min_n..=max_n {
            if start + n > tokens.len() {
                break;
            }
            out.push(join_canonical(&tokens[start..start + n]));
        }
    }
    out
}
