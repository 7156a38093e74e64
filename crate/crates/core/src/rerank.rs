//! Pointwise reranking of search candidates by a 0-100 relevance judge.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::enrichment::{PromptKind, Provider, ProviderError, ProviderRequest};
use crate::index::Index;
use crate::par;
use crate::prompts::PromptTemplates;
use crate::scoring::SearchResult;

pub const DEFAULT_DEPTH: usize = 200;
pub const DEFAULT_FINAL_K: usize = 10;
/// Judgement assigned when the judge fails; ranks below every real score.
pub const FAILED_JUDGEMENT: i32 = -1;

/// Reads the first JSON object with an integer `score` field and clamps the
/// value to 0..=100.
pub fn parse_judgement(reply: &str) -> Result<i32, ProviderError> {
    for (start, _) in reply.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&reply[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        // u64 values above i64::MAX still clamp to 100
        let score = obj
            .get("score")
            .and_then(|v| v.as_i64().or_else(|| v.as_u64().map(|_| i64::MAX)));
        if let Some(score) = score {
            return Ok(score.clamp(0, 100) as i32);
        }
    }
    Err(ProviderError::Parse(format!(
        "no {{\"score\": <integer>}} object in reply: {reply}"
    )))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub doc_id: String,
    /// 0..=100, or [`FAILED_JUDGEMENT`].
    pub score: i32,
    pub raw_reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedResult {
    pub doc_id: String,
    pub judgement: i32,
    pub search_score: f64,
}

/// Audit line for one judged candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub query_id: String,
    pub doc_id: String,
    pub raw_reply: Option<String>,
    pub score: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub results: Vec<RerankedResult>,
    /// One per judged candidate, in candidate order.
    pub judgements: Vec<Judgement>,
}

impl RerankOutcome {
    pub fn audit(&self, query_id: &str) -> Vec<AuditRecord> {
        self.judgements
            .iter()
            .map(|j| AuditRecord {
                query_id: query_id.to_owned(),
                doc_id: j.doc_id.clone(),
                raw_reply: j.raw_reply.clone(),
                score: j.score,
                error: j.error.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RerankOptions {
    pub depth: usize,
    pub final_k: usize,
    /// Concurrent judge calls; 0 uses every available core.
    pub workers: usize,
}

impl Default for RerankOptions {
    fn default() -> Self {
        Self {
            depth: DEFAULT_DEPTH,
            final_k: DEFAULT_FINAL_K,
            workers: 0,
        }
    }
}

fn judge_one<P: Provider + ?Sized>(
    judge: &P,
    prompts: &PromptTemplates,
    query_id: &str,
    query_text: &str,
    index: &Index,
    candidate: &SearchResult,
) -> Judgement {
    let document = match index.doc_number(&candidate.doc_id) {
        Some(n) => index.document(n).indexed_text(),
        None => String::new(),
    };
    let request = ProviderRequest {
        kind: PromptKind::Relevance,
        subject_id: format!("{query_id}::{}", candidate.doc_id),
        prompt: prompts.render(
            PromptKind::Relevance,
            &[("query", query_text), ("document", &document)],
        ),
        max_phrases: 0,
    };
    match judge.complete(&request) {
        Ok(reply) => match parse_judgement(&reply) {
            Ok(score) => Judgement {
                doc_id: candidate.doc_id.clone(),
                score,
                raw_reply: Some(reply),
                error: None,
            },
            Err(e) => Judgement {
                doc_id: candidate.doc_id.clone(),
                score: FAILED_JUDGEMENT,
                raw_reply: Some(reply),
                error: Some(e.to_string()),
            },
        },
        Err(e) => Judgement {
            doc_id: candidate.doc_id.clone(),
            score: FAILED_JUDGEMENT,
            raw_reply: None,
            error: Some(e.to_string()),
        },
    }
}

/// Judges the first `depth` candidates independently and returns the best
/// `final_k` by judgement, breaking ties by search score and then doc id.
/// `candidates` must already be in search rank order.
pub fn rerank<P: Provider + ?Sized>(
    query_id: &str,
    query_text: &str,
    candidates: &[SearchResult],
    index: &Index,
    judge: &P,
    prompts: &PromptTemplates,
    options: &RerankOptions,
) -> RerankOutcome {
    let pool = &candidates[..candidates.len().min(options.depth)];
    let judgements = par::map_bounded(pool, options.workers, |c| {
        judge_one(judge, prompts, query_id, query_text, index, c)
    });
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        judgements[b].score.cmp(&judgements[a].score).then_with(|| {
            pool[b]
                .score
                .total_cmp(&pool[a].score)
                .then_with(|| pool[a].doc_id.cmp(&pool[b].doc_id))
        })
    });
    let results = order
        .into_iter()
        .take(options.final_k)
        .map(|i| RerankedResult {
            doc_id: pool[i].doc_id.clone(),
            judgement: judgements[i].score,
            search_score: pool[i].score,
        })
        .collect();
    RerankOutcome {
        results,
        judgements,
    }
}
