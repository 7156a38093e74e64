//! Lucene-variant BM25 over the two-tier index, and the weighted two-part
//! query `score(d) = BM25(original, d) + w * BM25(expansion, d)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::index::{split_canonical, Index, IndexStats};
use crate::par;
use crate::tokenizer::TokenStream;

pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;
pub const DEFAULT_DELTA: f64 = 0.5;
pub const DEFAULT_EXPANSION_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("document frequency {df} exceeds corpus size {n_docs}")]
    DfExceedsCorpus { df: u32, n_docs: u32 },
    #[error("average document length is zero for a non-empty corpus")]
    ZeroAvgdl,
    #[error("invalid scoring parameters: {0}")]
    InvalidParams(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bm25Variant {
    /// IDF = ln(1 + (N - df + 0.5) / (df + 0.5)).
    #[default]
    Lucene,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringParams {
    pub k1: f64,
    pub b: f64,
    /// Additive smoothing for BM25L/BM25+. Ignored by the Lucene variant.
    pub delta: f64,
    pub variant: Bm25Variant,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            delta: DEFAULT_DELTA,
            variant: Bm25Variant::Lucene,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(ScoringError::InvalidParams(format!("k1 = {} must be >= 0", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(ScoringError::InvalidParams(format!("b = {} must be in [0, 1]", self.b)));
        }
        if !self.delta.is_finite() {
            return Err(ScoringError::InvalidParams("delta must be finite".into()));
        }
        Ok(())
    }
}

/// Lucene IDF. Positive for every `df <= n_docs`.
pub fn idf(df: u32, n_docs: u32) -> Result<f64, ScoringError> {
    if df > n_docs {
        return Err(ScoringError::DfExceedsCorpus { df, n_docs });
    }
    Ok(idf_unchecked(df, n_docs))
}

#[inline]
fn idf_unchecked(df: u32, n_docs: u32) -> f64 {
    let df = f64::from(df);
    (1.0 + (f64::from(n_docs) - df + 0.5) / (df + 0.5)).ln()
}

/// `k1 * (1 - b + b * |d| / avgdl)`. A corpus whose documents are all empty
/// has avgdl 0; every length then equals the mean, so the ratio is 1.
#[inline]
fn length_norm(doc_len: u32, avgdl: f64, params: &ScoringParams) -> f64 {
    let ratio = if avgdl > 0.0 {
        f64::from(doc_len) / avgdl
    } else {
        1.0
    };
    params.k1 * (1.0 - params.b + params.b * ratio)
}

#[inline]
fn saturate(idf: f64, tf: u32, norm: f64) -> f64 {
    let tf = f64::from(tf);
    idf * tf / (tf + norm)
}

/// One term's contribution to one document.
pub fn bm25_term(
    tf: u32,
    doc_len: u32,
    stats: &IndexStats,
    params: &ScoringParams,
    df: u32,
) -> Result<f64, ScoringError> {
    if stats.n_docs > 0 && stats.avgdl <= 0.0 {
        return Err(ScoringError::ZeroAvgdl);
    }
    let idf = idf(df, stats.n_docs)?;
    if tf == 0 {
        return Ok(0.0);
    }
    Ok(saturate(idf, tf, length_norm(doc_len, stats.avgdl, params)))
}

/// Sparse per-document scores keyed by internal document number. Documents
/// matching no term are absent and score 0.
pub type DocScores = HashMap<u32, f64>;

/// Accumulates BM25 of `terms` into `acc`. Single stems resolve in the unigram
/// tier, 2..=max stems in the hashed tier; anything else contributes nothing.
/// Contributions are added in term order so results do not depend on map
/// iteration order.
fn accumulate<S: AsRef<str>>(index: &Index, terms: &[S], params: &ScoringParams, acc: &mut DocScores) {
    let stats = index.stats();
    for term in terms {
        let stems = split_canonical(term.as_ref());
        let Some(key) = index.key_for(&stems) else {
            continue;
        };
        let postings = index.postings_for_key(&key);
        if postings.is_empty() {
            continue;
        }
        let idf = idf_unchecked(postings.len() as u32, stats.n_docs);
        for p in postings {
            let norm = length_norm(index.document(p.doc).length, stats.avgdl, params);
            *acc.entry(p.doc).or_insert(0.0) += saturate(idf, p.term_frequency(), norm);
        }
    }
}

/// BM25 of a bag of canonical terms/phrases; duplicates count twice.
pub fn bm25_scores<S: AsRef<str>>(index: &Index, terms: &[S], params: &ScoringParams) -> DocScores {
    let mut acc = DocScores::new();
    accumulate(index, terms, params, &mut acc);
    acc
}

/// [`bm25_scores`] keyed by external document id.
pub fn bm25<S: AsRef<str>>(terms: &[S], index: &Index, params: &ScoringParams) -> BTreeMap<String, f64> {
    bm25_scores(index, terms, params)
        .into_iter()
        .map(|(doc, s)| (index.document(doc).id.clone(), s))
        .collect()
}

/// The original query's stems plus weighted expansion phrases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedQuery {
    pub orig_terms: TokenStream,
    /// Canonical phrases (stems joined by single spaces).
    pub expansion: Vec<String>,
    pub weight: f64,
}

impl WeightedQuery {
    pub fn new(
        orig_terms: TokenStream,
        expansion: Vec<String>,
        weight: f64,
    ) -> Result<Self, ScoringError> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(ScoringError::InvalidQuery(format!("weight {weight} must be >= 0")));
        }
        if let Some(bad) = expansion.iter().find(|p| split_canonical(p).is_empty()) {
            return Err(ScoringError::InvalidQuery(format!("empty expansion phrase `{bad}`")));
        }
        Ok(Self {
            orig_terms,
            expansion,
            weight,
        })
    }

    /// Original terms only.
    pub fn plain(orig_terms: TokenStream) -> Self {
        Self {
            orig_terms,
            expansion: Vec::new(),
            weight: DEFAULT_EXPANSION_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub doc_id: String,
    #[serde(skip)]
    pub doc: u32,
    pub score: f64,
    pub orig_score: f64,
    pub exp_score: f64,
}

/// Descending score, then ascending document id.
pub fn rank_order(a: &SearchResult, b: &SearchResult) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Scores every document matching any original or expansion term and returns
/// the best `top_k`. Documents whose combined score is 0 are not returned.
pub fn weighted_search(
    query: &WeightedQuery,
    index: &Index,
    params: &ScoringParams,
    top_k: usize,
) -> Vec<SearchResult> {
    assert!(top_k >= 1, "top_k must be at least 1");
    let orig = bm25_scores(index, query.orig_terms.tokens(), params);
    let exp = bm25_scores(index, &query.expansion, params);

    let mut results: Vec<SearchResult> = orig
        .keys()
        .chain(exp.keys().filter(|d| !orig.contains_key(d)))
        .filter_map(|&doc| {
            let orig_score = orig.get(&doc).copied().unwrap_or(0.0);
            let exp_score = exp.get(&doc).copied().unwrap_or(0.0);
            let score = orig_score + query.weight * exp_score;
            (score > 0.0).then(|| SearchResult {
                doc_id: index.document(doc).id.clone(),
                doc,
                score,
                orig_score,
                exp_score,
            })
        })
        .collect();

    if results.len() > top_k {
        results.select_nth_unstable_by(top_k - 1, rank_order);
        results.truncate(top_k);
    }
    results.sort_unstable_by(rank_order);
    results
}

/// Runs independent searches, in parallel when enabled. Output order matches
/// `queries`.
pub fn search_batch(
    queries: &[WeightedQuery],
    index: &Index,
    params: &ScoringParams,
    top_k: usize,
) -> Vec<Vec<SearchResult>> {
    par::map(queries, |q| weighted_search(q, index, params, top_k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{IndexConfig, RawDocument};

    fn stream(words: &[&str]) -> TokenStream {
        words.iter().map(|s| s.to_string()).collect::<Vec<_>>().into()
    }

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
    fn idf_values() {
        assert!((idf(0, 1).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((idf(0, 1).unwrap() - 1.386_294).abs() < 1e-6);
        for n in [1, 5, 100] {
            assert!(idf(n, n).unwrap() > 0.0);
        }
        assert_eq!(
            idf(3, 2),
            Err(ScoringError::DfExceedsCorpus { df: 3, n_docs: 2 })
        );
    }

    #[test]
    fn bm25_term_values() {
        let stats = IndexStats {
            n_docs: 1,
            avgdl: 3.0,
            total_length: 3,
        };
        let p = ScoringParams::default();
        assert_eq!(bm25_term(0, 3, &stats, &p, 1).unwrap(), 0.0);
        let v = bm25_term(1, 3, &stats, &p, 1).unwrap();
        assert!((v - (4.0f64 / 3.0).ln() / 2.5).abs() < 1e-12);
        assert!((v - 0.115_073).abs() < 1e-6);

        let bound = idf(1, 1).unwrap();
        let mut last = 0.0;
        for tf in [1, 10, 100, 10_000, 1_000_000] {
            let v = bm25_term(tf, 3, &stats, &p, 1).unwrap();
            assert!(v > last && v < bound);
            last = v;
        }
        assert!(bound - last < 1e-5);

        let zero = IndexStats {
            n_docs: 2,
            avgdl: 0.0,
            total_length: 0,
        };
        assert_eq!(bm25_term(1, 0, &zero, &p, 1), Err(ScoringError::ZeroAvgdl));
    }

    #[test]
    fn params_validation() {
        assert!(ScoringParams::default().validate().is_ok());
        for bad in [
            ScoringParams { k1: -1.0, ..Default::default() },
            ScoringParams { b: 1.5, ..Default::default() },
            ScoringParams { delta: f64::NAN, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn empty_and_duplicate_terms() {
        let idx = fixture();
        let p = ScoringParams::default();
        assert!(bm25::<&str>(&[], &idx, &p).is_empty());
        let once = bm25(&["cat"], &idx, &p);
        let twice = bm25(&["cat", "cat"], &idx, &p);
        for (doc, s) in &once {
            assert!((twice[doc] - 2.0 * s).abs() < 1e-12);
        }
        assert!(!once.contains_key("d2"));
    }

    #[test]
    fn weight_zero_matches_plain_bm25() {
        let idx = fixture();
        let p = ScoringParams::default();
        let q0 = WeightedQuery::new(stream(&["cat"]), vec!["dog sat".into()], 0.0).unwrap();
        let plain = WeightedQuery::plain(stream(&["cat"]));
        let a = weighted_search(&q0, &idx, &p, 10);
        let b = weighted_search(&plain, &idx, &p, 10);
        let ids = |r: &[SearchResult]| r.iter().map(|x| x.doc_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        assert_eq!(ids(&a), ["d1", "d3"]);
    }

    #[test]
    fn score_decomposes() {
        let idx = fixture();
        let p = ScoringParams::default();
        let q = WeightedQuery::new(stream(&["sat"]), vec!["dog sat".into(), "ran".into()], 0.5)
            .unwrap();
        let res = weighted_search(&q, &idx, &p, 10);
        assert_eq!(res.len(), 3);
        for r in &res {
            assert!((r.score - (r.orig_score + 0.5 * r.exp_score)).abs() < 1e-9);
        }
        assert_eq!(res[0].doc_id, "d2");
    }

    #[test]
    fn ties_break_by_doc_id_and_truncate() {
        let idx = Index::build(
            vec![
                RawDocument::new("b", "", "same words"),
                RawDocument::new("a", "", "same words"),
                RawDocument::new("c", "", "same words"),
            ],
            IndexConfig::default(),
        )
        .unwrap();
        let q = WeightedQuery::plain(stream(&["word"]));
        let res = weighted_search(&q, &idx, &ScoringParams::default(), 2);
        assert_eq!(
            res.iter().map(|r| r.doc_id.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
    }

    #[test]
    fn invalid_queries() {
        assert!(WeightedQuery::new(stream(&[]), vec![], -0.1).is_err());
        assert!(WeightedQuery::new(stream(&[]), vec![" ".into()], 0.5).is_err());
    }

    #[test]
    fn batch_equals_individual() {
        let idx = fixture();
        let p = ScoringParams::default();
        let qs = vec![
            WeightedQuery::plain(stream(&["cat"])),
            WeightedQuery::plain(stream(&["sat", "ran"])),
            WeightedQuery::plain(stream(&[])),
        ];
        let batch = search_batch(&qs, &idx, &p, 5);
        for (q, r) in qs.iter().zip(&batch) {
            assert_eq!(&weighted_search(q, &idx, &p, 5), r);
        }
        assert!(batch[2].is_empty());
    }
}
