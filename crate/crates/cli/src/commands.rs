use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use lexbridge::enrichment::{
    enrich_corpus, expand_query, CorpusEnrichOptions, EndpointConfig, FilterConfig, HttpProvider,
    Provider, QueryExpandOptions, StubProvider,
};
use lexbridge::eval::{evaluate, EvalError, Gain, QrelSet};
use lexbridge::index::{Index, IndexError};
use lexbridge::io::{self, QueryRecord, ResultRecord};
use lexbridge::prompts::PromptTemplates;
use lexbridge::rerank::{rerank, RerankOptions};
use lexbridge::scoring::{search_batch, WeightedQuery};
use lexbridge::Tokenizer;
use serde_json::{json, Value};

use crate::config::Config;
use crate::{BuildArgs, CliError, EnrichArgs, EvalArgs, ProviderArgs, SearchArgs};

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_index(path: &Path) -> Result<Index, CliError> {
    Index::load_from_path(path).map_err(|e| match e {
        IndexError::Io(io) => CliError::Data(format!("cannot read index {}: {io}", path.display())),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })
}

fn check_tau(tau: f64) -> Result<(), CliError> {
    FilterConfig::corpus(tau).validate().map_err(CliError::Usage)
}

pub fn build(args: &BuildArgs, mut config: Config) -> Result<(), CliError> {
    let index_config = &mut config.index;
    if let Some(n) = args.slot_count {
        index_config.slot_count = n;
    }
    if let Some(n) = args.min_ngram {
        index_config.min_ngram = n;
    }
    if let Some(n) = args.max_ngram {
        index_config.max_ngram = n;
    }
    index_config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let tokenizer = match &args.stopwords {
        Some(path) => Tokenizer::from_stopword_file(path).map_err(data)?,
        None => Tokenizer::default(),
    };
    let corpus = io::read_corpus(&args.corpus).map_err(data)?;
    let index = Index::build_with_tokenizer(corpus, config.index, tokenizer).map_err(data)?;
    index.save_to_path(&args.output).map_err(data)?;
    let stats = index.stats();
    println!("n_docs {}", stats.n_docs);
    println!("avgdl {:.4}", stats.avgdl);
    println!("unigram_terms {}", index.unigram_terms());
    println!("hashed_slots {}", index.hashed_tier().occupied());
    Ok(())
}

/// Merges provider flags into the config section; a flag for one kind of
/// provider displaces a configured provider of the other kind.
fn merge_provider(args: &ProviderArgs, config: &mut Config) {
    if let Some(stub) = &args.stub {
        config.provider.stub = Some(stub.clone());
        config.provider.endpoint = None;
    }
    if let Some(url) = &args.endpoint {
        let endpoint = config.provider.endpoint.get_or_insert_with(EndpointConfig::default);
        endpoint.url = url.clone();
        config.provider.stub = None;
    }
    if let (Some(model), Some(endpoint)) = (&args.model, config.provider.endpoint.as_mut()) {
        endpoint.model = model.clone();
    }
    if let Some(dir) = &args.prompts {
        config.prompts.dir = Some(dir.clone());
    }
    if let Some(task) = &args.task {
        config.prompts.task = task.clone();
    }
}

fn stub_provider(path: &Path) -> Result<Box<dyn Provider>, CliError> {
    StubProvider::from_path(path)
        .map(|s| Box::new(s) as Box<dyn Provider>)
        .map_err(|e| CliError::Provider(e.to_string()))
}

fn make_provider(config: &Config) -> Result<Option<Box<dyn Provider>>, CliError> {
    match (&config.provider.stub, &config.provider.endpoint) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "configure either a stub script or an endpoint, not both".into(),
        )),
        (Some(path), None) => stub_provider(path).map(Some),
        (None, Some(endpoint)) => HttpProvider::new(endpoint.clone())
            .map(|p| Some(Box::new(p) as Box<dyn Provider>))
            .map_err(|e| CliError::Provider(e.to_string())),
        (None, None) => Ok(None),
    }
}

fn provider_label(config: &Config) -> Value {
    match (&config.provider.stub, &config.provider.endpoint) {
        (Some(stub), _) => json!(format!(
            "stub:{}",
            stub.file_name().map_or_else(|| stub.display().to_string(), |f| f.to_string_lossy().into_owned())
        )),
        (None, Some(endpoint)) => json!(format!("http:{}", endpoint.model)),
        (None, None) => Value::Null,
    }
}

fn prompts(config: &Config) -> Result<PromptTemplates, CliError> {
    match &config.prompts.dir {
        Some(dir) => PromptTemplates::from_dir(dir, &config.prompts.task),
        None => PromptTemplates::builtin(&config.prompts.task),
    }
    .map_err(|e| CliError::Usage(e.to_string()))
}

pub fn enrich(args: &EnrichArgs, mut config: Config) -> Result<(), CliError> {
    merge_provider(&args.provider, &mut config);
    if let Some(tau) = args.tau {
        config.enrich.tau = tau;
    }
    if let Some(n) = args.max_phrases {
        config.enrich.max_phrases = n;
    }
    if let Some(n) = args.workers {
        config.enrich.workers = n;
    }
    check_tau(config.enrich.tau)?;
    let templates = prompts(&config)?;
    let provider = make_provider(&config)?
        .ok_or_else(|| CliError::Usage("enrich needs --stub or --endpoint".into()))?;
    let mut index = load_index(&args.index)?;

    let options = CorpusEnrichOptions {
        filter: FilterConfig::corpus(config.enrich.tau),
        max_phrases: config.enrich.max_phrases,
        workers: config.enrich.workers,
    };
    let report = enrich_corpus(&mut index, provider.as_ref(), &templates, &options);
    let jsonl = report.to_jsonl();
    match &args.report {
        Some(path) => write_file(path, jsonl.as_bytes())?,
        None => print!("{jsonl}"),
    }
    let subjects = report.subjects.len();
    let failures = report.failures();
    eprintln!(
        "enriched {subjects} documents: {} postings registered, {failures} provider failures",
        report.registered()
    );
    if subjects > 0 && failures == subjects {
        let first = report.subjects.iter().find_map(|s| s.error.as_deref()).unwrap_or("");
        return Err(CliError::Provider(format!("every provider request failed; first error: {first}")));
    }
    index.save_to_path(&args.output).map_err(data)
}

pub fn search(args: &SearchArgs, mut config: Config) -> Result<(), CliError> {
    merge_provider(&args.provider, &mut config);
    let s = &mut config.search;
    if let Some(w) = args.weight {
        s.weight = w;
    }
    if let Some(k) = args.k {
        s.k = k;
    }
    if let Some(d) = args.depth {
        s.depth = d;
    }
    if args.expand {
        s.expand = true;
    }
    if args.no_expand {
        s.expand = false;
    }
    if args.rerank {
        s.rerank = true;
    }
    if args.no_rerank {
        s.rerank = false;
    }
    if let Some(t) = args.tau {
        s.tau = t;
    }
    if let Some(n) = args.max_phrases {
        s.max_phrases = n;
    }
    if let Some(n) = args.workers {
        s.workers = n;
    }
    if let Some(k1) = args.k1 {
        config.scoring.k1 = k1;
    }
    if let Some(b) = args.b {
        config.scoring.b = b;
    }
    if let Some(j) = &args.judge_stub {
        config.provider.judge_stub = Some(j.clone());
    }
    let s = config.search.clone();
    config.scoring.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    check_tau(s.tau)?;
    if s.k == 0 || s.depth == 0 {
        return Err(CliError::Usage("k and depth must be at least 1".into()));
    }
    if !(s.weight.is_finite() && s.weight >= 0.0) {
        return Err(CliError::Usage(format!("weight {} must be >= 0", s.weight)));
    }

    let templates = prompts(&config)?;
    let provider = if s.expand || (s.rerank && config.provider.judge_stub.is_none()) {
        Some(make_provider(&config)?.ok_or_else(|| {
            CliError::Usage("--expand and --rerank need --stub, --judge-stub or --endpoint".into())
        })?)
    } else {
        None
    };
    let judge: Option<Box<dyn Provider>> = match (&config.provider.judge_stub, s.rerank) {
        (Some(path), true) => Some(stub_provider(path)?),
        _ => None,
    };

    let index = load_index(&args.index)?;
    let queries: Vec<QueryRecord> = match (&args.query, &args.queries) {
        (Some(text), _) => vec![QueryRecord {
            id: args.query_id.clone(),
            text: text.clone(),
        }],
        (None, Some(path)) => io::read_queries(path).map_err(data)?,
        (None, None) => unreachable!("clap requires one of --query and --queries"),
    };

    let mut expansion_log = Vec::new();
    let weighted: Vec<WeightedQuery> = match (&provider, s.expand) {
        (Some(p), true) => {
            let options = QueryExpandOptions {
                filter: FilterConfig::query(s.tau),
                weight: s.weight,
                max_phrases: s.max_phrases,
            };
            let expanded = lexbridge::par::map_bounded(&queries, s.workers, |q| {
                expand_query(&q.id, &q.text, &index, p.as_ref(), &templates, &options)
            });
            expanded
                .into_iter()
                .zip(&queries)
                .map(|(e, q)| {
                    expansion_log.push(json!({
                        "query_id": q.id,
                        "expansion": e.query.expansion,
                        "degraded": e.degraded,
                        "verdicts": e.verdicts,
                    }));
                    e.query
                })
                .collect()
        }
        _ => queries
            .iter()
            .map(|q| WeightedQuery::plain(index.tokenizer().tokenize(&q.text)))
            .collect(),
    };

    let depth = if s.rerank { s.depth.max(s.k) } else { s.k };
    let hits = search_batch(&weighted, &index, &config.scoring, depth);

    let mut records = Vec::new();
    let mut audit = Vec::new();
    for (q, results) in queries.iter().zip(hits) {
        if s.rerank {
            let judge = judge.as_deref().or(provider.as_deref()).expect("judge resolved above");
            let options = RerankOptions {
                depth: s.depth,
                final_k: s.k,
                workers: s.workers,
            };
            let out = rerank(&q.id, &q.text, &results, &index, judge, &templates, &options);
            audit.extend(out.audit(&q.id));
            records.extend(out.results.into_iter().enumerate().map(|(i, r)| ResultRecord {
                query_id: q.id.clone(),
                rank: i + 1,
                doc_id: r.doc_id,
                score: f64::from(r.judgement),
            }));
        } else {
            records.extend(results.into_iter().enumerate().map(|(i, r)| ResultRecord {
                query_id: q.id.clone(),
                rank: i + 1,
                doc_id: r.doc_id,
                score: r.score,
            }));
        }
    }

    match &args.output {
        Some(path) => io::write_results(create(path)?, &records),
        None => io::write_results(std::io::stdout().lock(), &records),
    }
    .map_err(data)?;
    if let Some(path) = &args.audit {
        let mut out = create(path)?;
        for rec in &audit {
            serde_json::to_writer(&mut out, rec).map_err(data)?;
            out.write_all(b"\n").map_err(data)?;
        }
        out.flush().map_err(data)?;
    }
    if let Some(path) = &args.expansions {
        let mut out = create(path)?;
        for rec in &expansion_log {
            serde_json::to_writer(&mut out, rec).map_err(data)?;
            out.write_all(b"\n").map_err(data)?;
        }
        out.flush().map_err(data)?;
    }
    Ok(())
}

pub fn eval(args: &EvalArgs, mut config: Config) -> Result<(), CliError> {
    if !args.k.is_empty() {
        config.eval.ks = args.k.clone();
    }
    if let Some(g) = &args.gain {
        config.eval.gain = if g == "exponential" { Gain::Exponential } else { Gain::Linear };
    }
    if config.eval.ks.is_empty() || config.eval.ks.contains(&0) {
        return Err(CliError::Usage("cutoffs must be a non-empty list of positive integers".into()));
    }
    let rankings = io::read_results(&args.results).map_err(data)?;
    let qrels = QrelSet::from_path(&args.qrels).map_err(data)?;
    let answers = args.answers.as_ref().map(io::read_answers).transpose().map_err(data)?;
    let index = args.index.as_deref().map(load_index).transpose()?;
    let lookup = |doc_id: &str| {
        let index = index.as_ref()?;
        index.doc_number(doc_id).map(|n| index.document(n).indexed_text())
    };

    let metadata: BTreeMap<String, Value> = [
        ("k1", json!(config.scoring.k1)),
        ("b", json!(config.scoring.b)),
        ("weight", json!(config.search.weight)),
        ("corpus_tau", json!(config.enrich.tau)),
        ("query_tau", json!(config.search.tau)),
        ("expand", json!(config.search.expand)),
        ("rerank", json!(config.search.rerank)),
        ("provider", provider_label(&config)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect();

    let report = evaluate(
        &rankings,
        &qrels,
        answers.as_ref().map(|a| (a, &lookup as &dyn Fn(&str) -> Option<String>)),
        &config.eval.ks,
        config.eval.gain,
        metadata,
    )
    .map_err(|e| match e {
        EvalError::NoOverlap => CliError::Data(format!(
            "{e}: results have {} queries, qrels have {}",
            rankings.len(),
            qrels.len()
        )),
        EvalError::InvalidK(_) => CliError::Usage(e.to_string()),
        other => CliError::Data(other.to_string()),
    })?;
    let json = report.to_json();
    match &args.output {
        Some(path) => write_file(path, json.as_bytes())?,
        None => print!("{json}"),
    }
    print!("{}", report.table());
    Ok(())
}
