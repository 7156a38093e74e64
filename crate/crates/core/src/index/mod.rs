//! Two-tier inverted index.
//!
//! Unigrams get exact posting lists keyed by stem. Shingles of
//! `min_ngram..=max_ngram` stems go into a [`HashedTier`] whose memory is
//! bounded by its slot count. Enrichment adds postings to either tier without
//! touching document lengths or corpus statistics.

mod hashed;
mod persist;

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::par;
use crate::tokenizer::{join_canonical, Tokenizer, NGRAM_SEPARATOR};

pub use hashed::{slot_of, HashedTier, DEFAULT_SLOT_COUNT};
pub use persist::{FORMAT_VERSION, MAGIC};

/// Longest n-gram the hashed tier will accept; keeps shingle fan-out sane.
pub const MAX_SUPPORTED_NGRAM: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("invalid index config: {0}")]
    InvalidConfig(String),
    #[error("index i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed index file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnrichError {
    #[error("unknown document id `{0}`")]
    UnknownDoc(String),
    #[error("phrase `{0}` has no indexable terms")]
    EmptyPhrase(String),
    #[error("phrase `{phrase}` has {stems} stems, more than the {max}-gram tier holds")]
    Oversize {
        phrase: String,
        stems: usize,
        max: usize,
    },
    #[error("phrase `{phrase}` has {stems} stems, below the {min}-gram tier")]
    Undersize {
        phrase: String,
        stems: usize,
        min: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub slot_count: u32,
    pub min_ngram: usize,
    pub max_ngram: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            slot_count: DEFAULT_SLOT_COUNT,
            min_ngram: 2,
            max_ngram: 4,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.slot_count == 0 {
            return Err(IndexError::InvalidConfig("slot_count must be positive".into()));
        }
        if self.min_ngram < 2 || self.min_ngram > self.max_ngram {
            return Err(IndexError::InvalidConfig(format!(
                "n-gram range {}..={} must satisfy 2 <= min <= max",
                self.min_ngram, self.max_ngram
            )));
        }
        if self.max_ngram > MAX_SUPPORTED_NGRAM {
            return Err(IndexError::InvalidConfig(format!(
                "max_ngram {} exceeds {MAX_SUPPORTED_NGRAM}",
                self.max_ngram
            )));
        }
        Ok(())
    }
}

/// A document as read from a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub text: String,
}

impl RawDocument {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// Title and body joined by a single space.
    pub fn indexed_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

/// An indexed document. `length` is the token count of the indexed text and
/// never changes after build.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    pub length: u32,
}

impl Document {
    pub fn indexed_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

/// One document's entry in a posting list. `doc` is the internal document
/// number (position in build order). `tf` counts natural occurrences; an
/// enrichment adds a single extra occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
    pub enriched: bool,
}

impl Posting {
    pub fn term_frequency(&self) -> u32 {
        self.tf + u32::from(self.enriched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub n_docs: u32,
    pub avgdl: f64,
    pub total_length: u64,
}

impl IndexStats {
    fn from_lengths(lengths: impl Iterator<Item = u32>) -> Self {
        let (n, total) = lengths.fold((0u32, 0u64), |(n, t), l| (n + 1, t + u64::from(l)));
        let avgdl = if n == 0 { 0.0 } else { total as f64 / f64::from(n) };
        Self {
            n_docs: n,
            avgdl,
            total_length: total,
        }
    }
}

/// Which tier a lookup was served by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfLookup {
    /// Exact count from the unigram tier.
    Unigram(u32),
    /// Bucket count from the hashed tier; never below the true count.
    Hashed(u32),
    /// The phrase has no stems.
    Empty,
    /// No tier holds phrases of this many stems.
    UnsupportedLength(usize),
}

impl DfLookup {
    pub fn count(&self) -> u32 {
        match *self {
            DfLookup::Unigram(n) | DfLookup::Hashed(n) => n,
            DfLookup::Empty | DfLookup::UnsupportedLength(_) => 0,
        }
    }

    pub fn is_supported(&self) -> bool {
        matches!(self, DfLookup::Unigram(_) | DfLookup::Hashed(_))
    }
}

/// Location of a term or phrase within the index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TierKey {
    Unigram(String),
    Slot(u32),
}

/// An enrichment validated against the index but not yet applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedEnrichment {
    pub doc: u32,
    pub canonical: String,
    pub key: TierKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrichOutcome {
    pub canonical: String,
    pub key: TierKey,
    /// False when the same document was already enriched at this key.
    pub newly_registered: bool,
}

pub struct Index {
    config: IndexConfig,
    tokenizer: Tokenizer,
    docs: Vec<Document>,
    doc_numbers: HashMap<String, u32>,
    unigrams: HashMap<String, Vec<Posting>>,
    hashed: HashedTier,
    stats: IndexStats,
}

impl fmt::Debug for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Index")
            .field("config", &self.config)
            .field("stats", &self.stats)
            .field("unigram_terms", &self.unigrams.len())
            .field("occupied_slots", &self.hashed.occupied())
            .finish()
    }
}

struct DocTerms {
    length: u32,
    unigrams: Vec<(String, u32)>,
    slots: Vec<(u32, u32)>,
}

fn count_terms(tokenizer: &Tokenizer, config: &IndexConfig, doc: &RawDocument) -> DocTerms {
    let stream = tokenizer.tokenize(&doc.indexed_text());
    let tokens = stream.tokens();

    let mut unigram_counts: HashMap<&str, u32> = HashMap::new();
    for t in tokens {
        *unigram_counts.entry(t.as_str()).or_default() += 1;
    }
    let mut unigrams: Vec<(String, u32)> = unigram_counts
        .into_iter()
        .map(|(t, n)| (t.to_owned(), n))
        .collect();
    unigrams.sort_unstable();

    // same grams as `shingle`, hashed from one reusable buffer
    let mut slot_counts: HashMap<u32, u32> = HashMap::new();
    let mut gram = String::new();
    for start in 0..tokens.len() {
        gram.clear();
        gram.push_str(&tokens[start]);
        for n in 2..=config.max_ngram {
            let Some(next) = tokens.get(start + n - 1) else {
                break;
            };
            gram.push(NGRAM_SEPARATOR);
            gram.push_str(next);
            if n >= config.min_ngram {
                *slot_counts.entry(slot_of(&gram, config.slot_count)).or_default() += 1;
            }
        }
    }
    let mut slots: Vec<(u32, u32)> = slot_counts.into_iter().collect();
    slots.sort_unstable();

    DocTerms {
        length: u32::try_from(tokens.len()).expect("document longer than u32::MAX tokens"),
        unigrams,
        slots,
    }
}

impl Index {
    /// Builds an index with the default stopword list.
    pub fn build(corpus: Vec<RawDocument>, config: IndexConfig) -> Result<Self, IndexError> {
        Self::build_with_tokenizer(corpus, config, Tokenizer::default())
    }

    pub fn build_with_tokenizer(
        corpus: Vec<RawDocument>,
        config: IndexConfig,
        tokenizer: Tokenizer,
    ) -> Result<Self, IndexError> {
        config.validate()?;
        let mut doc_numbers = HashMap::with_capacity(corpus.len());
        for (i, doc) in corpus.iter().enumerate() {
            let n = u32::try_from(i)
                .map_err(|_| IndexError::InvalidConfig("more than u32::MAX documents".into()))?;
            if doc_numbers.insert(doc.id.clone(), n).is_some() {
                return Err(IndexError::DuplicateDocId(doc.id.clone()));
            }
        }

        let per_doc = par::map(&corpus, |doc| count_terms(&tokenizer, &config, doc));

        let mut unigrams: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut hashed = HashedTier::new(config.slot_count);
        for (doc, terms) in (0u32..).zip(&per_doc) {
            for (term, tf) in &terms.unigrams {
                let posting = Posting {
                    doc,
                    tf: *tf,
                    enriched: false,
                };
                match unigrams.get_mut(term.as_str()) {
                    Some(list) => list.push(posting),
                    None => {
                        unigrams.insert(term.clone(), vec![posting]);
                    }
                }
            }
            for &(slot, tf) in &terms.slots {
                hashed.slot_entry(slot).push(Posting {
                    doc,
                    tf,
                    enriched: false,
                });
            }
        }

        let docs: Vec<Document> = corpus
            .into_iter()
            .zip(&per_doc)
            .map(|(raw, terms)| Document {
                id: raw.id,
                title: raw.title,
                text: raw.text,
                length: terms.length,
            })
            .collect();
        let stats = IndexStats::from_lengths(docs.iter().map(|d| d.length));

        Ok(Self {
            config,
            tokenizer,
            docs,
            doc_numbers,
            unigrams,
            hashed,
            stats,
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn stats(&self) -> IndexStats {
        self.stats
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn document(&self, doc: u32) -> &Document {
        &self.docs[doc as usize]
    }

    pub fn doc_number(&self, id: &str) -> Option<u32> {
        self.doc_numbers.get(id).copied()
    }

    pub fn unigram_terms(&self) -> usize {
        self.unigrams.len()
    }

    pub fn hashed_tier(&self) -> &HashedTier {
        &self.hashed
    }

    /// Resolves stems to their tier. `None` when no tier holds phrases of
    /// this length.
    pub fn key_for(&self, stems: &[String]) -> Option<TierKey> {
        match stems.len() {
            0 => None,
            1 => Some(TierKey::Unigram(stems[0].clone())),
            n if n >= self.config.min_ngram && n <= self.config.max_ngram => {
                Some(TierKey::Slot(self.hashed.slot_for(&join_canonical(stems))))
            }
            _ => None,
        }
    }

    pub fn postings_for_key(&self, key: &TierKey) -> &[Posting] {
        match key {
            TierKey::Unigram(term) => self.unigrams.get(term).map_or(&[], Vec::as_slice),
            TierKey::Slot(slot) => self.hashed.postings(*slot),
        }
    }

    /// Posting list for a canonical term or phrase (stems joined by single
    /// spaces). Unsupported lengths yield an empty list.
    pub fn postings(&self, canonical: &str) -> &[Posting] {
        let stems = split_canonical(canonical);
        self.key_for(&stems)
            .map_or(&[], |key| self.postings_for_key(&key))
    }

    /// Document frequency of a canonical term or phrase.
    pub fn df(&self, canonical: &str) -> DfLookup {
        self.df_stems(&split_canonical(canonical))
    }

    pub fn df_stems(&self, stems: &[String]) -> DfLookup {
        match self.key_for(stems) {
            None if stems.is_empty() => DfLookup::Empty,
            None => DfLookup::UnsupportedLength(stems.len()),
            Some(key @ TierKey::Unigram(_)) => DfLookup::Unigram(self.list_len(&key)),
            Some(key @ TierKey::Slot(_)) => DfLookup::Hashed(self.list_len(&key)),
        }
    }

    fn list_len(&self, key: &TierKey) -> u32 {
        // at most one posting per document, so this fits
        self.postings_for_key(key).len() as u32
    }

    /// Validates an enrichment without mutating the index.
    pub fn prepare_enrichment(
        &self,
        doc_id: &str,
        phrase: &str,
    ) -> Result<PreparedEnrichment, EnrichError> {
        let doc = self
            .doc_number(doc_id)
            .ok_or_else(|| EnrichError::UnknownDoc(doc_id.to_owned()))?;
        let stems = self.tokenizer.tokenize(phrase).into_tokens();
        self.prepare_stems(doc, phrase, &stems)
    }

    /// Same as [`Index::prepare_enrichment`] for an already tokenized phrase.
    pub fn prepare_stems(
        &self,
        doc: u32,
        phrase: &str,
        stems: &[String],
    ) -> Result<PreparedEnrichment, EnrichError> {
        if stems.is_empty() {
            return Err(EnrichError::EmptyPhrase(phrase.to_owned()));
        }
        if stems.len() > self.config.max_ngram {
            return Err(EnrichError::Oversize {
                phrase: phrase.to_owned(),
                stems: stems.len(),
                max: self.config.max_ngram,
            });
        }
        let key = self.key_for(stems).ok_or_else(|| EnrichError::Undersize {
            phrase: phrase.to_owned(),
            stems: stems.len(),
            min: self.config.min_ngram,
        })?;
        Ok(PreparedEnrichment {
            doc,
            canonical: join_canonical(stems),
            key,
        })
    }

    /// Registers a prepared enrichment as one posting with a single
    /// occurrence. Repeating an enrichment is a no-op.
    pub fn apply_enrichment(&mut self, prepared: PreparedEnrichment) -> EnrichOutcome {
        let PreparedEnrichment {
            doc,
            canonical,
            key,
        } = prepared;
        let list = match &key {
            TierKey::Unigram(term) => self.unigrams.entry(term.clone()).or_default(),
            TierKey::Slot(slot) => self.hashed.slot_entry(*slot),
        };
        let newly_registered = match list.binary_search_by_key(&doc, |p| p.doc) {
            Ok(i) => !std::mem::replace(&mut list[i].enriched, true),
            Err(i) => {
                list.insert(
                    i,
                    Posting {
                        doc,
                        tf: 0,
                        enriched: true,
                    },
                );
                true
            }
        };
        EnrichOutcome {
            canonical,
            key,
            newly_registered,
        }
    }

    /// Registers `phrase` for `doc_id` as one atomic entry. Sub-windows of the
    /// phrase are not indexed.
    pub fn enrich(&mut self, doc_id: &str, phrase: &str) -> Result<EnrichOutcome, EnrichError> {
        let prepared = self.prepare_enrichment(doc_id, phrase)?;
        Ok(self.apply_enrichment(prepared))
    }

    /// Element-wise [`Index::enrich`]. Validation and tokenization run in
    /// parallel; registration is applied in input order.
    pub fn enrich_batch<D, P>(&mut self, proposals: &[(D, P)]) -> Vec<Result<EnrichOutcome, EnrichError>>
    where
        D: AsRef<str> + Sync,
        P: AsRef<str> + Sync,
    {
        let prepared = par::map(proposals, |(doc, phrase)| {
            self.prepare_enrichment(doc.as_ref(), phrase.as_ref())
        });
        prepared
            .into_iter()
            .map(|p| p.map(|p| self.apply_enrichment(p)))
            .collect()
    }

    /// Ends the writer phase. The returned handle is cheap to clone and
    /// shareable across threads.
    pub fn freeze(self) -> FrozenIndex {
        FrozenIndex(Arc::new(self))
    }

    /// Canonical dump of every posting list, sorted, for equality checks.
    pub fn posting_snapshot(&self) -> (Vec<(String, Vec<Posting>)>, Vec<(u32, Vec<Posting>)>) {
        let mut unigrams: Vec<(String, Vec<Posting>)> = self
            .unigrams
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        unigrams.sort_by(|a, b| a.0.cmp(&b.0));
        let mut slots: Vec<(u32, Vec<Posting>)> = self
            .hashed
            .slots()
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        slots.sort_by_key(|e| e.0);
        (unigrams, slots)
    }
}

/// Read-only, shareable index.
#[derive(Debug, Clone)]
pub struct FrozenIndex(Arc<Index>);

impl Deref for FrozenIndex {
    type Target = Index;

    fn deref(&self) -> &Index {
        &self.0
    }
}

pub(crate) fn split_canonical(canonical: &str) -> Vec<String> {
    canonical
        .split(NGRAM_SEPARATOR)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Index {
        Index::build(
            vec![
                RawDocument::new("d1", "", "cat sat"),
                RawDocument::new("d2", "", "dog sat"),
                RawDocument::new("d3", "", "cat ran"),
            ],
            IndexConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn three_doc_counts() {
        let idx = fixture();
        assert_eq!(idx.stats().n_docs, 3);
        assert_eq!(idx.stats().avgdl, 2.0);
        assert_eq!(idx.df("sat"), DfLookup::Unigram(2));
        assert_eq!(idx.df("cat"), DfLookup::Unigram(2));
        assert_eq!(idx.df("dog"), DfLookup::Unigram(1));
        assert_eq!(idx.df("zebra").count(), 0);
    }

    #[test]
    fn empty_corpus() {
        let idx = Index::build(vec![], IndexConfig::default()).unwrap();
        assert_eq!(idx.stats().n_docs, 0);
        assert_eq!(idx.df("anything").count(), 0);
        assert_eq!(idx.df("two words").count(), 0);
    }

    #[test]
    fn shingles_are_indexed() {
        let idx = Index::build(
            vec![RawDocument::new("d", "", "alpha beta gamma")],
            IndexConfig::default(),
        )
        .unwrap();
        for gram in ["alpha beta", "beta gamma", "alpha beta gamma"] {
            assert_eq!(idx.df(gram), DfLookup::Hashed(1), "{gram}");
        }
    }

    #[test]
    fn long_phrase_lookup_is_flagged() {
        let idx = fixture();
        assert_eq!(idx.df("a b c d e"), DfLookup::UnsupportedLength(5));
        assert_eq!(idx.df(""), DfLookup::Empty);
    }

    #[test]
    fn duplicate_id_fails_build() {
        let err = Index::build(
            vec![RawDocument::new("x", "", "a"), RawDocument::new("x", "", "b")],
            IndexConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, IndexError::DuplicateDocId(ref id) if id == "x"));
        assert!(err.to_string().contains("`x`"));
    }

    #[test]
    fn title_counts_toward_length() {
        let idx = Index::build(
            vec![RawDocument::new("d", "Fluffy Cats", "sat quietly")],
            IndexConfig::default(),
        )
        .unwrap();
        assert_eq!(idx.document(0).length, 4);
        // "cat sat" spans the title/body boundary
        assert_eq!(idx.df("cat sat").count(), 1);
    }

    #[test]
    fn enrichment_is_atomic() {
        let mut idx = Index::build(
            vec![
                RawDocument::new("d1", "", "screening of patients"),
                RawDocument::new("d2", "", "accuracy of tests"),
            ],
            IndexConfig::default(),
        )
        .unwrap();
        let before_unigram = idx.df("diagnost");
        let out = idx.enrich("d1", "diagnostic accuracy").unwrap();
        assert_eq!(out.canonical, "diagnost accuraci");
        assert!(out.newly_registered);
        assert!(idx.df("diagnost accuraci").count() >= 1);
        assert!(idx.postings("diagnost accuraci").iter().any(|p| p.doc == 0));
        assert_eq!(idx.df("diagnost"), before_unigram);
        assert_eq!(idx.df("accuraci"), DfLookup::Unigram(1));
        assert_eq!(idx.stats().avgdl, 2.0);
        assert_eq!(idx.document(0).length, 2);
    }

    #[test]
    fn enrichment_is_idempotent() {
        let mut idx = fixture();
        let first = idx.enrich("d2", "purring kitten").unwrap();
        let snapshot = idx.posting_snapshot();
        let second = idx.enrich("d2", "purring kitten").unwrap();
        assert!(first.newly_registered);
        assert!(!second.newly_registered);
        assert_eq!(idx.posting_snapshot(), snapshot);
        let posting = idx.postings(&first.canonical)[0];
        assert_eq!(posting.term_frequency(), 1);
    }

    #[test]
    fn single_stem_enrichment_uses_unigram_tier() {
        let mut idx = fixture();
        idx.enrich("d2", "felines").unwrap();
        assert_eq!(idx.df("felin"), DfLookup::Unigram(1));
        // enriching an existing natural term adds one occurrence once
        idx.enrich("d1", "cat").unwrap();
        idx.enrich("d1", "cats").unwrap();
        let p = idx.postings("cat")[0];
        assert_eq!((p.tf, p.term_frequency()), (1, 2));
    }

    #[test]
    fn enrichment_errors() {
        let mut idx = fixture();
        assert_eq!(
            idx.enrich("nope", "thing"),
            Err(EnrichError::UnknownDoc("nope".into()))
        );
        assert!(matches!(idx.enrich("d1", "the of and"), Err(EnrichError::EmptyPhrase(_))));
        assert!(matches!(
            idx.enrich("d1", "one two three four five"),
            Err(EnrichError::Oversize { stems: 5, max: 4, .. })
        ));
    }

    #[test]
    fn batch_matches_sequential() {
        let proposals = vec![
            ("d1", "feline companion"),
            ("d3", "feline companion"),
            ("d2", "canine"),
            ("d9", "missing doc"),
            ("d1", "feline companion"),
            ("d2", "loyal hound dog"),
        ];
        let mut batch = fixture();
        let results = batch.enrich_batch(&proposals);
        assert_eq!(results.len(), proposals.len());
        assert!(matches!(results[3], Err(EnrichError::UnknownDoc(_))));
        assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 5);

        let mut reversed = fixture();
        for (d, p) in proposals.iter().rev() {
            let _ = reversed.enrich(d, p);
        }
        assert_eq!(batch.posting_snapshot(), reversed.posting_snapshot());
        assert!(batch.enrich_batch::<&str, &str>(&[]).is_empty());
    }

    #[test]
    fn invalid_configs() {
        for config in [
            IndexConfig { slot_count: 0, ..Default::default() },
            IndexConfig { min_ngram: 1, ..Default::default() },
            IndexConfig { min_ngram: 4, max_ngram: 3, ..Default::default() },
            IndexConfig { max_ngram: 9, ..Default::default() },
        ] {
            assert!(Index::build(vec![], config).is_err(), "{config:?}");
        }
    }
}
