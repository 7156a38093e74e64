//! Two-sided vocabulary enrichment.
//!
//! Corpus side: a provider proposes phrases per document, the DF filter drops
//! phrases that are too common, and the survivors are registered as atomic
//! index entries. Query side: the provider sketches vocabulary a relevant
//! document would contain, the DF filter keeps phrases that exist in the
//! (enriched) index and are not too common, and the survivors become the
//! expansion half of a [`WeightedQuery`].

mod http;
mod provider;

use serde::{Deserialize, Serialize};

use crate::index::{DfLookup, Index, PreparedEnrichment};
use crate::par;
use crate::prompts::PromptTemplates;
use crate::scoring::{WeightedQuery, DEFAULT_EXPANSION_WEIGHT};
use crate::tokenizer::join_canonical;

pub use http::{extract_content, EndpointConfig, HttpProvider, DEFAULT_TOKEN_ENV};
pub use provider::{
    parse_phrases, PromptKind, Provider, ProviderError, ProviderRequest, StubError, StubProvider,
    StubReply,
};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_MAX_PHRASES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Upper bound on DF as a fraction of the corpus.
    pub tau: f64,
    /// Reject phrases absent from the index (query side).
    pub require_nonzero: bool,
}

impl FilterConfig {
    pub fn corpus(tau: f64) -> Self {
        Self {
            tau,
            require_nonzero: false,
        }
    }

    pub fn query(tau: f64) -> Self {
        Self {
            tau,
            require_nonzero: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.tau > 0.0 && self.tau <= 1.0 {
            Ok(())
        } else {
            Err(format!("tau = {} must be in (0, 1]", self.tau))
        }
    }

    /// Largest admissible DF: floor(tau * n_docs). Products within rounding
    /// error of an integer snap to it, so 0.29 * 100 gives 29.
    pub fn max_df(&self, n_docs: u32) -> u64 {
        let product = self.tau * f64::from(n_docs);
        let nearest = product.round();
        if (product - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as u64
        } else {
            product.floor() as u64
        }
    }

    pub fn admits(&self, df: u32, n_docs: u32) -> bool {
        u64::from(df) <= self.max_df(n_docs) && (!self.require_nonzero || df > 0)
    }
}

/// Why a phrase was accepted or rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum FilterRule {
    Accepted,
    /// Tokenizes to zero stems (stopwords or punctuation only).
    NoTerms,
    /// Some unit's DF exceeds `max_df`.
    TooCommon { max_df: u64 },
    /// Some unit does not occur in the index.
    Absent,
}

/// A lookup unit: the phrase itself, or one of its sliding windows when it
/// is longer than the largest n-gram tier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitDf {
    pub canonical: String,
    pub df: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseVerdict {
    pub phrase: String,
    pub units: Vec<UnitDf>,
    #[serde(flatten)]
    pub rule: FilterRule,
}

impl PhraseVerdict {
    pub fn accepted(&self) -> bool {
        self.rule == FilterRule::Accepted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterResult {
    /// Canonical units of accepted phrases, first occurrence order, no
    /// duplicates. Each has at most `max_ngram` stems.
    pub accepted: Vec<String>,
    pub verdicts: Vec<PhraseVerdict>,
}

/// Stems split into indexable units: the whole list when it fits a tier,
/// otherwise every window of `max_n` stems.
fn units_of(stems: &[String], max_n: usize) -> Vec<String> {
    if stems.len() <= max_n {
        vec![join_canonical(stems)]
    } else {
        stems.windows(max_n).map(join_canonical).collect()
    }
}

/// Judges each phrase against `index`. A phrase is accepted only when every
/// one of its units passes; the accepted units are returned for registration
/// or expansion.
pub fn df_filter<S: AsRef<str>>(phrases: &[S], index: &Index, config: &FilterConfig) -> FilterResult {
    let n_docs = index.stats().n_docs;
    let max_n = index.config().max_ngram;
    let mut result = FilterResult::default();
    for phrase in phrases {
        let phrase = phrase.as_ref();
        let stems = index.tokenizer().tokenize(phrase).into_tokens();
        if stems.is_empty() {
            result.verdicts.push(PhraseVerdict {
                phrase: phrase.to_owned(),
                units: Vec::new(),
                rule: FilterRule::NoTerms,
            });
            continue;
        }
        let units: Vec<UnitDf> = units_of(&stems, max_n)
            .into_iter()
            .map(|canonical| {
                let lookup = index.df(&canonical);
                debug_assert!(!matches!(lookup, DfLookup::UnsupportedLength(_)));
                UnitDf {
                    df: lookup.count(),
                    canonical,
                }
            })
            .collect();
        let max_df = config.max_df(n_docs);
        let rule = if units.iter().any(|u| u64::from(u.df) > max_df) {
            FilterRule::TooCommon { max_df }
        } else if config.require_nonzero && units.iter().any(|u| u.df == 0) {
            FilterRule::Absent
        } else {
            FilterRule::Accepted
        };
        if rule == FilterRule::Accepted {
            for u in &units {
                if !result.accepted.contains(&u.canonical) {
                    result.accepted.push(u.canonical.clone());
                }
            }
        }
        result.verdicts.push(PhraseVerdict {
            phrase: phrase.to_owned(),
            units,
            rule,
        });
    }
    result
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEnrichOptions {
    pub filter: FilterConfig,
    pub max_phrases: usize,
    /// Concurrent provider requests; 0 uses every available core.
    pub workers: usize,
}

impl Default for CorpusEnrichOptions {
    fn default() -> Self {
        Self {
            filter: FilterConfig::corpus(DEFAULT_TAU),
            max_phrases: DEFAULT_MAX_PHRASES,
            workers: 0,
        }
    }
}

/// One line of the enrichment report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub subject_id: String,
    pub provider: String,
    pub proposed: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Postings added to the index (repeats of existing entries excluded).
    pub registered: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub verdicts: Vec<PhraseVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusEnrichReport {
    pub subjects: Vec<SubjectReport>,
}

impl CorpusEnrichReport {
    pub fn failures(&self) -> usize {
        self.subjects.iter().filter(|s| s.error.is_some()).count()
    }

    pub fn registered(&self) -> usize {
        self.subjects.iter().map(|s| s.registered).sum()
    }

    /// JSON-lines rendering, one subject per line in document order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.subjects {
            out.push_str(&serde_json::to_string(s).expect("report serializes"));
            out.push('\n');
        }
        out
    }
}

fn request_phrases<P: Provider + ?Sized>(
    provider: &P,
    request: &ProviderRequest,
) -> Result<Vec<String>, ProviderError> {
    let reply = provider.complete(request)?;
    parse_phrases(&reply, request.max_phrases)
}

/// Offline corpus-side enrichment. Every verdict is computed against the
/// index as it was on entry, so the outcome does not depend on document
/// order; registrations are applied afterwards in document order. Provider
/// failures are recorded per document and never abort the run.
pub fn enrich_corpus<P: Provider + ?Sized>(
    index: &mut Index,
    provider: &P,
    prompts: &PromptTemplates,
    options: &CorpusEnrichOptions,
) -> CorpusEnrichReport {
    let provider_id = provider.id();
    let doc_numbers: Vec<u32> = (0..index.stats().n_docs).collect();

    let planned: Vec<(SubjectReport, Vec<PreparedEnrichment>)> = {
        let base: &Index = index;
        par::map_bounded(&doc_numbers, options.workers, |&doc| {
            let document = base.document(doc);
            let text = document.indexed_text();
            let max_terms = options.max_phrases.to_string();
            let request = ProviderRequest {
                kind: PromptKind::Corpus,
                subject_id: document.id.clone(),
                prompt: prompts.render(
                    PromptKind::Corpus,
                    &[("document", &text), ("doc_id", &document.id), ("max_terms", &max_terms)],
                ),
                max_phrases: options.max_phrases,
            };
            let mut report = SubjectReport {
                subject_id: document.id.clone(),
                provider: provider_id.clone(),
                proposed: 0,
                accepted: 0,
                rejected: 0,
                registered: 0,
                error: None,
                verdicts: Vec::new(),
            };
            let phrases = match request_phrases(provider, &request) {
                Ok(p) => p,
                Err(e) => {
                    report.error = Some(e.to_string());
                    return (report, Vec::new());
                }
            };
            let filtered = df_filter(&phrases, base, &options.filter);
            report.proposed = phrases.len();
            report.accepted = filtered.verdicts.iter().filter(|v| v.accepted()).count();
            report.rejected = report.proposed - report.accepted;
            report.verdicts = filtered.verdicts;
            let prepared = filtered
                .accepted
                .iter()
                .map(|unit| {
                    let stems: Vec<String> = unit.split(' ').map(str::to_owned).collect();
                    base.prepare_stems(doc, unit, &stems)
                        .expect("accepted units fit a tier")
                })
                .collect();
            (report, prepared)
        })
    };

    let mut subjects = Vec::with_capacity(planned.len());
    for (mut report, prepared) in planned {
        report.registered = prepared
            .into_iter()
            .map(|p| index.apply_enrichment(p))
            .filter(|o| o.newly_registered)
            .count();
        subjects.push(report);
    }
    CorpusEnrichReport { subjects }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryExpandOptions {
    pub filter: FilterConfig,
    pub weight: f64,
    pub max_phrases: usize,
}

impl Default for QueryExpandOptions {
    fn default() -> Self {
        Self {
            filter: FilterConfig::query(DEFAULT_TAU),
            weight: DEFAULT_EXPANSION_WEIGHT,
            max_phrases: DEFAULT_MAX_PHRASES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedQuery {
    pub query: WeightedQuery,
    pub verdicts: Vec<PhraseVerdict>,
    /// Set when the provider failed and the query fell back to its original
    /// terms.
    pub degraded: Option<String>,
}

/// Online query-side expansion.
pub fn expand_query<P: Provider + ?Sized>(
    query_id: &str,
    query_text: &str,
    index: &Index,
    provider: &P,
    prompts: &PromptTemplates,
    options: &QueryExpandOptions,
) -> ExpandedQuery {
    let orig_terms = index.tokenizer().tokenize(query_text);
    let max_terms = options.max_phrases.to_string();
    let request = ProviderRequest {
        kind: PromptKind::Query,
        subject_id: query_id.to_owned(),
        prompt: prompts.render(
            PromptKind::Query,
            &[("query", query_text), ("max_terms", &max_terms)],
        ),
        max_phrases: options.max_phrases,
    };
    let (filtered, degraded) = match request_phrases(provider, &request) {
        Ok(phrases) => (df_filter(&phrases, index, &options.filter), None),
        Err(e) => {
            log::warn!("query `{query_id}`: expansion unavailable ({e})");
            (FilterResult::default(), Some(e.to_string()))
        }
    };
    let query = WeightedQuery::new(orig_terms, filtered.accepted, options.weight)
        .expect("filtered units are non-empty and the weight was validated by the caller");
    ExpandedQuery {
        query,
        verdicts: filtered.verdicts,
        degraded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{IndexConfig, RawDocument};
    use crate::scoring::{weighted_search, ScoringParams};

    fn corpus(n: usize) -> Index {
        // "common" appears in every doc, "rare" only in doc 0
        let docs = (0..n)
            .map(|i| {
                let extra = if i == 0 { " rare" } else { "" };
                RawDocument::new(format!("d{i}"), "", format!("common words{extra}"))
            })
            .collect();
        Index::build(docs, IndexConfig::default()).unwrap()
    }

    struct Failing;

    impl Provider for Failing {
        fn id(&self) -> String {
            "failing".into()
        }

        fn complete(&self, _: &ProviderRequest) -> Result<String, ProviderError> {
            Err(ProviderError::Network("down".into()))
        }
    }

    #[test]
    fn threshold_arithmetic() {
        let f = FilterConfig::corpus(0.5);
        assert_eq!(f.max_df(10), 5);
        assert!(f.admits(5, 10));
        assert!(!f.admits(6, 10));
        assert!(f.admits(0, 10));
        assert!(!FilterConfig::query(0.5).admits(0, 10));
        assert_eq!(FilterConfig::corpus(0.3).max_df(7), 2);
        assert_eq!(FilterConfig::corpus(0.29).max_df(100), 29);
        assert!(FilterConfig::corpus(0.0).validate().is_err());
        assert!(FilterConfig::corpus(1.0).validate().is_ok());
        assert!(FilterConfig::corpus(1.01).validate().is_err());
    }

    #[test]
    fn filter_rules() {
        let idx = corpus(10);
        let q = df_filter(&["rare", "common", "unseen", "the of"], &idx, &FilterConfig::query(0.5));
        let rules: Vec<_> = q.verdicts.iter().map(|v| v.rule.clone()).collect();
        assert_eq!(
            rules,
            [
                FilterRule::Accepted,
                FilterRule::TooCommon { max_df: 5 },
                FilterRule::Absent,
                FilterRule::NoTerms
            ]
        );
        assert_eq!(q.accepted, ["rare"]);
        assert_eq!(q.verdicts[1].units[0].df, 10);

        let c = df_filter(&["rare", "common", "unseen"], &idx, &FilterConfig::corpus(0.5));
        assert_eq!(c.accepted, ["rare", "unseen"]);
    }

    #[test]
    fn long_phrases_split_into_windows() {
        let idx = corpus(4);
        let r = df_filter(
            &["alpha beta gamma delta epsilon"],
            &idx,
            &FilterConfig::corpus(0.5),
        );
        assert_eq!(r.accepted, ["alpha beta gamma delta", "beta gamma delta epsilon"]);
        assert_eq!(r.verdicts[0].units.len(), 2);
    }

    #[test]
    fn accepted_units_dedupe() {
        let idx = corpus(4);
        let r = df_filter(&["Rare", "rare!", "RARE"], &idx, &FilterConfig::query(0.5));
        assert_eq!(r.accepted, ["rare"]);
        assert_eq!(r.verdicts.len(), 3);
    }

    #[test]
    fn corpus_enrichment_registers_and_reports() {
        let mut idx = Index::build(
            vec![
                RawDocument::new("d1", "", "screening test sensitivity"),
                RawDocument::new("d2", "", "weather report"),
                RawDocument::new("d3", "", "weather forecast"),
            ],
            IndexConfig::default(),
        )
        .unwrap();
        let stub = StubProvider::from_phrases(
            "t",
            [
                ("d1", vec!["diagnostic accuracy", "the", "weather"]),
                ("d2", vec!["meteorology"]),
            ],
        );
        let report = enrich_corpus(&mut idx, &stub, &PromptTemplates::default(), &CorpusEnrichOptions::default());
        assert_eq!(report.subjects.len(), 3);
        let d1 = &report.subjects[0];
        assert_eq!((d1.proposed, d1.accepted, d1.rejected, d1.registered), (3, 1, 2, 1));
        assert_eq!(d1.verdicts[1].rule, FilterRule::NoTerms);
        assert_eq!(d1.verdicts[2].rule, FilterRule::TooCommon { max_df: 1 });
        assert_eq!(report.subjects[2].proposed, 0);
        assert_eq!(report.registered(), 2);
        assert!(idx.postings("diagnost accuraci").iter().any(|p| p.doc == 0));
        let stem = idx.tokenizer().tokenize("meteorology").canonical();
        assert_eq!(idx.df(&stem).count(), 1);

        let jsonl = report.to_jsonl();
        let lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with(r#"{"subject_id":"d1","provider":"stub:t""#));
    }

    #[test]
    fn corpus_enrichment_uses_base_snapshot() {
        // max_df is 1; applying registrations as they are judged would push
        // the third document's verdict over the bound
        let mut idx = Index::build(
            vec![
                RawDocument::new("a", "", "x"),
                RawDocument::new("b", "", "y"),
                RawDocument::new("c", "", "z"),
            ],
            IndexConfig::default(),
        )
        .unwrap();
        let stub = StubProvider::from_phrases(
            "t",
            [("a", vec!["novel term"]), ("b", vec!["novel term"]), ("c", vec!["novel term"])],
        );
        let options = CorpusEnrichOptions {
            filter: FilterConfig::corpus(0.34),
            ..Default::default()
        };
        let report = enrich_corpus(&mut idx, &stub, &PromptTemplates::default(), &options);
        assert!(report.subjects.iter().all(|s| s.accepted == 1));
        assert_eq!(idx.df("novel term").count(), 3);
    }

    #[test]
    fn corpus_enrichment_survives_failures() {
        let mut idx = corpus(3);
        let before = idx.posting_snapshot();
        let report = enrich_corpus(&mut idx, &Failing, &PromptTemplates::default(), &CorpusEnrichOptions::default());
        assert_eq!(report.failures(), 3);
        assert!(report.subjects[0].error.as_deref().unwrap().contains("down"));
        assert_eq!(idx.posting_snapshot(), before);
    }

    #[test]
    fn empty_stub_is_a_no_op() {
        let mut idx = corpus(5);
        let before = idx.posting_snapshot();
        let stub = StubProvider::from_phrases::<_, String, String>("empty", []);
        let report = enrich_corpus(&mut idx, &stub, &PromptTemplates::default(), &CorpusEnrichOptions::default());
        assert_eq!(report.failures(), 0);
        assert_eq!(idx.posting_snapshot(), before);
    }

    #[test]
    fn query_expansion_paths() {
        let idx = corpus(6);
        let stub = StubProvider::from_phrases("t", [("q1", vec!["rare", "unseen"]), ("q2", vec!["unseen"])]);
        let opts = QueryExpandOptions::default();
        let p = PromptTemplates::default();

        let e1 = expand_query("q1", "words", &idx, &stub, &p, &opts);
        assert_eq!(e1.query.expansion, ["rare"]);
        assert_eq!(e1.query.orig_terms.tokens(), ["word"]);
        assert_eq!(e1.query.weight, 0.5);
        assert!(e1.degraded.is_none());

        let e2 = expand_query("q2", "words", &idx, &stub, &p, &opts);
        assert!(e2.query.expansion.is_empty());

        let failed = expand_query("q1", "words", &idx, &Failing, &p, &opts);
        assert!(failed.query.expansion.is_empty());
        assert!(failed.degraded.is_some());
        let params = ScoringParams::default();
        let plain = WeightedQuery::plain(idx.tokenizer().tokenize("words"));
        assert_eq!(
            weighted_search(&failed.query, &idx, &params, 10),
            weighted_search(&plain, &idx, &params, 10)
        );

        let empty = expand_query("q3", "", &idx, &stub, &p, &opts);
        assert!(empty.query.orig_terms.is_empty());
        assert!(weighted_search(&empty.query, &idx, &params, 10).is_empty());
    }
}
