//! BEIR-style evaluation: qrels, Recall@k, NDCG@k and answer coverage.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::tokenizer::normalize;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid k `{0}`; cutoffs must be at least 1")]
    InvalidK(usize),
    #[error("no query appears in both the results and the qrels")]
    NoOverlap,
}

/// Graded relevance judgements. Only grades of at least 1 are stored, so
/// absent pairs are non-relevant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelSet {
    queries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Grades below 1 are ignored, but the query id is still recorded.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: i64) {
        let entry = self.queries.entry(query_id.to_owned()).or_default();
        if grade >= 1 {
            entry.insert(doc_id.to_owned(), u32::try_from(grade).unwrap_or(u32::MAX));
        }
    }

    /// Parses `query-id<TAB>doc-id<TAB>grade` lines. A first line whose grade
    /// column is not an integer is treated as a header.
    pub fn from_tsv<R: BufRead>(reader: R, path: &str) -> Result<Self, EvalError> {
        let mut qrels = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|source| EvalError::Io {
                path: path.to_owned(),
                source,
            })?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let parse_err = |message: String| EvalError::Parse {
                path: path.to_owned(),
                line: line_no,
                message,
            };
            let [q, d, g] = cols[..] else {
                return Err(parse_err(format!("expected 3 tab-separated columns, found {}", cols.len())));
            };
            match g.trim().parse::<i64>() {
                Ok(grade) => qrels.insert(q.trim(), d.trim(), grade),
                Err(_) if line_no == 1 => continue,
                Err(_) => return Err(parse_err(format!("grade `{g}` is not an integer"))),
            }
        }
        Ok(qrels)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::from_tsv(std::io::BufReader::new(file), &shown)
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.queries.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// gain = grade
    #[default]
    Linear,
    /// gain = 2^grade - 1
    Exponential,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => f64::from(grade),
            Gain::Exponential => 2f64.powf(f64::from(grade)) - 1.0,
        }
    }
}

/// Fraction of `relevant` found in the first `k` entries of `ranked`.
/// Returns `None` when `relevant` is empty.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<&str>, k: usize) -> Option<f64> {
    assert!(k >= 1, "k must be at least 1");
    if relevant.is_empty() {
        return None;
    }
    let mut seen = HashSet::new();
    let hits = ranked
        .iter()
        .take(k)
        .map(AsRef::as_ref)
        .filter(|d| relevant.contains(d) && seen.insert(*d))
        .count();
    Some(hits as f64 / relevant.len() as f64)
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// DCG@k over the grades in `qrels`, divided by the DCG@k of the ideal
/// ordering. Returns `None` when no document is relevant.
pub fn ndcg_at_k<S: AsRef<str>>(
    ranked: &[S],
    qrels: &BTreeMap<String, u32>,
    k: usize,
    gain: Gain,
) -> Option<f64> {
    assert!(k >= 1, "k must be at least 1");
    if qrels.is_empty() {
        return None;
    }
    let mut seen = HashSet::new();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter_map(|(i, d)| {
            let d = d.as_ref();
            let grade = *qrels.get(d)?;
            seen.insert(d).then(|| gain.apply(grade) * discount(i + 1))
        })
        .sum();
    let mut ideal: Vec<u32> = qrels.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.apply(g) * discount(i + 1))
        .sum();
    Some(dcg / idcg)
}

/// 1 if any gold string occurs in the normalized concatenation of the top-k
/// texts. Texts are joined with a newline so matches cannot span documents.
pub fn answer_coverage<S: AsRef<str>, G: AsRef<str>>(texts: &[S], gold: &[G], k: usize) -> u8 {
    let haystack = texts
        .iter()
        .take(k)
        .map(|t| normalize(t.as_ref()))
        .collect::<Vec<_>>()
        .join("\n");
    let hit = gold
        .iter()
        .map(|g| normalize(g.as_ref()))
        .any(|g| !g.is_empty() && haystack.contains(&g));
    u8::from(hit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    /// Keyed by the cutoff, e.g. `"10"`.
    pub recall: BTreeMap<String, f64>,
    pub ndcg: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub coverage: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub queries: usize,
    pub recall: BTreeMap<String, f64>,
    pub ndcg: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_queries: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub coverage: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatches {
    /// Appear in results but not in the qrels.
    pub results_only: Vec<String>,
    /// Appear in the qrels but not in results; scored as empty rankings.
    pub qrels_only: Vec<String>,
    /// In the qrels with no document graded 1 or higher; excluded.
    pub no_relevant: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub gain: Gain,
    pub averages: Averages,
    pub per_query: Vec<QueryMetrics>,
    pub mismatches: Mismatches,
    /// Free-form run description (params, weight, tau, provider ids).
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn key(k: usize) -> String {
    k.to_string()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores every query present in the qrels and macro-averages the results.
pub fn evaluate(
    rankings: &BTreeMap<String, Vec<String>>,
    qrels: &QrelSet,
    answers: Option<(&BTreeMap<String, Vec<String>>, &dyn Fn(&str) -> Option<String>)>,
    ks: &[usize],
    gain: Gain,
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<EvalReport, EvalError> {
    if let Some(&bad) = ks.iter().find(|&&k| k == 0) {
        return Err(EvalError::InvalidK(bad));
    }
    let ks: Vec<usize> = ks.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let results_only: Vec<String> = rankings
        .keys()
        .filter(|q| qrels.get(q).is_none())
        .cloned()
        .collect();
    let qrels_only: Vec<String> = qrels
        .query_ids()
        .filter(|q| !rankings.contains_key(*q))
        .map(str::to_owned)
        .collect();
    if rankings.keys().all(|q| qrels.get(q).is_none()) {
        return Err(EvalError::NoOverlap);
    }
    let empty = Vec::new();
    let mut no_relevant = Vec::new();
    let mut per_query = Vec::new();
    for qid in qrels.query_ids() {
        let graded = qrels.get(qid).expect("listed id");
        if graded.is_empty() {
            no_relevant.push(qid.to_owned());
            continue;
        }
        let ranked = rankings.get(qid).unwrap_or(&empty);
        let relevant: HashSet<&str> = graded.keys().map(String::as_str).collect();
        let mut m = QueryMetrics {
            query_id: qid.to_owned(),
            recall: BTreeMap::new(),
            ndcg: BTreeMap::new(),
            coverage: BTreeMap::new(),
        };
        for &k in &ks {
            m.recall.insert(key(k), recall_at_k(ranked, &relevant, k).expect("non-empty"));
            m.ndcg.insert(key(k), ndcg_at_k(ranked, graded, k, gain).expect("non-empty"));
        }
        if let Some((gold, lookup)) = answers {
            if let Some(strings) = gold.get(qid).filter(|g| !g.is_empty()) {
                let texts: Vec<String> = ranked.iter().filter_map(|d| lookup(d)).collect();
                for &k in &ks {
                    m.coverage.insert(key(k), answer_coverage(&texts, strings, k));
                }
            }
        }
        per_query.push(m);
    }
    let coverage_rows: Vec<&QueryMetrics> = per_query.iter().filter(|m| !m.coverage.is_empty()).collect();
    let averages = Averages {
        queries: per_query.len(),
        recall: ks
            .iter()
            .map(|&k| (key(k), mean(per_query.iter().map(|m| m.recall[&key(k)]))))
            .collect(),
        ndcg: ks
            .iter()
            .map(|&k| (key(k), mean(per_query.iter().map(|m| m.ndcg[&key(k)]))))
            .collect(),
        coverage_queries: answers.map(|_| coverage_rows.len()),
        coverage: if answers.is_some() {
            ks.iter()
                .map(|&k| {
                    (
                        key(k),
                        mean(coverage_rows.iter().map(|m| f64::from(m.coverage[&key(k)]))),
                    )
                })
                .collect()
        } else {
            BTreeMap::new()
        },
    };
    Ok(EvalReport {
        ks,
        gain,
        averages,
        per_query,
        mismatches: Mismatches {
            results_only,
            qrels_only,
            no_relevant,
        },
        metadata,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "metric");
        for k in &self.ks {
            let _ = write!(out, "{:>10}", format!("@{k}"));
        }
        out.push('\n');
        let mut row = |name: &str, values: &BTreeMap<String, f64>| {
            let _ = write!(out, "{name:<10}");
            for k in &self.ks {
                let _ = write!(out, "{:>10.4}", values.get(&key(*k)).copied().unwrap_or(0.0));
            }
            out.push('\n');
        };
        row("recall", &self.averages.recall);
        row("ndcg", &self.averages.ndcg);
        if !self.averages.coverage.is_empty() {
            row("coverage", &self.averages.coverage);
        }
        let _ = writeln!(out, "queries evaluated: {}", self.averages.queries);
        let m = &self.mismatches;
        for (label, ids) in [
            ("only in results", &m.results_only),
            ("only in qrels", &m.qrels_only),
            ("no relevant docs", &m.no_relevant),
        ] {
            if !ids.is_empty() {
                let _ = writeln!(out, "{label} ({}): {}", ids.len(), ids.join(", "));
            }
        }
        out
    }
}
