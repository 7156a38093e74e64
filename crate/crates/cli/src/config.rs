//! Run configuration. Values come from built-in defaults, then an optional
//! TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use lexbridge::enrichment::{EndpointConfig, DEFAULT_MAX_PHRASES, DEFAULT_TAU};
use lexbridge::eval::Gain;
use lexbridge::index::IndexConfig;
use lexbridge::rerank::{DEFAULT_DEPTH, DEFAULT_FINAL_K};
use lexbridge::scoring::{ScoringParams, DEFAULT_EXPANSION_WEIGHT};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub index: IndexConfig,
    pub scoring: ScoringParams,
    pub enrich: EnrichSection,
    pub search: SearchSection,
    pub provider: ProviderSection,
    pub prompts: PromptSection,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            index: IndexConfig::default(),
            scoring: ScoringParams::default(),
            enrich: EnrichSection::default(),
            search: SearchSection::default(),
            provider: ProviderSection::default(),
            prompts: PromptSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichSection {
    pub tau: f64,
    pub max_phrases: usize,
    pub workers: usize,
}

impl Default for EnrichSection {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            max_phrases: DEFAULT_MAX_PHRASES,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub weight: f64,
    pub k: usize,
    pub depth: usize,
    pub expand: bool,
    pub rerank: bool,
    /// DF ceiling for query-side phrases.
    pub tau: f64,
    pub max_phrases: usize,
    pub workers: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            weight: DEFAULT_EXPANSION_WEIGHT,
            k: DEFAULT_FINAL_K,
            depth: DEFAULT_DEPTH,
            expand: false,
            rerank: false,
            tau: DEFAULT_TAU,
            max_phrases: DEFAULT_MAX_PHRASES,
            workers: 0,
        }
    }
}

/// Either a stub script or an HTTP endpoint. The token is never read from
/// here; only the name of the environment variable holding it.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub stub: Option<PathBuf>,
    /// Separate judge script for reranking; defaults to `stub`.
    pub judge_stub: Option<PathBuf>,
    pub endpoint: Option<EndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub dir: Option<PathBuf>,
    pub task: String,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            dir: None,
            task: "default".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub gain: Gain,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![10],
            gain: Gain::Linear,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let body = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: Config = toml::from_str(&body)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.provider.stub,
            &mut config.provider.judge_stub,
            &mut config.prompts.dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}
