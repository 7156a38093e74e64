//! Sparse retrieval with hashed n-gram tiers, DF-filtered vocabulary
//! enrichment, weighted BM25 search, pointwise reranking and evaluation.

pub mod enrichment;
pub mod eval;
pub mod index;
pub mod io;
pub mod par;
pub mod prompts;
pub mod rerank;
pub mod scoring;
pub mod tokenizer;

pub use enrichment::{Provider, ProviderError, StubProvider};
pub use index::{Index, IndexConfig, RawDocument};
pub use scoring::{weighted_search, ScoringParams, SearchResult, WeightedQuery};
pub use tokenizer::{TokenStream, Tokenizer};
