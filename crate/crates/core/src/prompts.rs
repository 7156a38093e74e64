//! Prompt templates. Templates are plain text with `{name}` placeholders;
//! the built-in set lives under `prompts/<task>/{corpus,query,rerank}.txt`
//! and a directory with the same layout can replace it at run time. A task
//! missing one of the three files inherits it from `default`.

use std::path::Path;

use crate::enrichment::PromptKind;

macro_rules! builtin {
    ($task:literal, $file:literal) => {
        ($task, $file, include_str!(concat!("../prompts/", $task, "/", $file, ".txt")))
    };
}

const BUILTIN: &[(&str, &str, &str)] = &[
    builtin!("default", "corpus"),
    builtin!("default", "query"),
    builtin!("default", "rerank"),
    builtin!("factoid", "corpus"),
    builtin!("factoid", "query"),
    builtin!("factoid", "rerank"),
    builtin!("multihop", "query"),
    builtin!("multihop", "rerank"),
    builtin!("claim", "corpus"),
    builtin!("claim", "query"),
    builtin!("claim", "rerank"),
    builtin!("argument", "corpus"),
    builtin!("argument", "query"),
    builtin!("argument", "rerank"),
    builtin!("financial", "corpus"),
    builtin!("financial", "query"),
    builtin!("financial", "rerank"),
    builtin!("citation", "corpus"),
    builtin!("citation", "query"),
    builtin!("citation", "rerank"),
    builtin!("duplicate", "corpus"),
    builtin!("duplicate", "query"),
    builtin!("duplicate", "rerank"),
];

pub const TASKS: &[&str] = &[
    "default", "factoid", "multihop", "claim", "argument", "financial", "citation", "duplicate",
];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt task `{0}`")]
    UnknownTask(String),
    #[error("failed to read prompt template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn file_name(kind: PromptKind) -> &'static str {
    match kind {
        PromptKind::Corpus => "corpus",
        PromptKind::Query => "query",
        PromptKind::Relevance => "rerank",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub task: String,
    pub corpus: String,
    pub query: String,
    pub relevance: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin("default").expect("default prompts are built in")
    }
}

impl PromptTemplates {
    pub fn builtin(task: &str) -> Result<Self, PromptError> {
        if !TASKS.contains(&task) {
            return Err(PromptError::UnknownTask(task.to_owned()));
        }
        let get = |kind: PromptKind| {
            let name = file_name(kind);
            let find = |t: &str| {
                BUILTIN
                    .iter()
                    .find(|(bt, bf, _)| *bt == t && *bf == name)
                    .map(|(_, _, body)| (*body).to_owned())
            };
            find(task).or_else(|| find("default")).expect("default covers every kind")
        };
        Ok(Self {
            task: task.to_owned(),
            corpus: get(PromptKind::Corpus),
            query: get(PromptKind::Query),
            relevance: get(PromptKind::Relevance),
        })
    }

    /// Loads `<dir>/<task>/*.txt`, falling back to `<dir>/default/*.txt`.
    pub fn from_dir(dir: impl AsRef<Path>, task: &str) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let load = |kind: PromptKind| -> Result<String, PromptError> {
            let file = format!("{}.txt", file_name(kind));
            let primary = dir.join(task).join(&file);
            let path = if primary.exists() {
                primary
            } else {
                dir.join("default").join(&file)
            };
            std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        Ok(Self {
            task: task.to_owned(),
            corpus: load(PromptKind::Corpus)?,
            query: load(PromptKind::Query)?,
            relevance: load(PromptKind::Relevance)?,
        })
    }

    pub fn template(&self, kind: PromptKind) -> &str {
        match kind {
            PromptKind::Corpus => &self.corpus,
            PromptKind::Query => &self.query,
            PromptKind::Relevance => &self.relevance,
        }
    }

    pub fn render(&self, kind: PromptKind, vars: &[(&str, &str)]) -> String {
        render(self.template(kind), vars)
    }
}

/// Substitutes `{name}` for each pair in one left-to-right pass. Unknown
/// placeholders and other braces are left alone, so substituted text is
/// never re-expanded.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = vars.iter().find_map(|(name, value)| {
            let tag_len = name.len() + 2;
            (tail.len() >= tag_len
                && tail[1..].starts_with(name)
                && tail.as_bytes()[tag_len - 1] == b'}')
                .then_some((tag_len, *value))
        });
        match hit {
            Some((len, value)) => {
                out.push_str(value);
                rest = &tail[len..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_once() {
        let out = render(
            "Q: {query} / {missing} / {\"score\": n} / {query}",
            &[("query", "{query} x")],
        );
        assert_eq!(out, "Q: {query} x / {missing} / {\"score\": n} / {query} x");
    }

    #[test]
    fn every_task_has_all_templates() {
        for task in TASKS {
            let p = PromptTemplates::builtin(task).unwrap();
            assert!(p.corpus.contains("{document}"), "{task}");
            assert!(p.query.contains("{query}"), "{task}");
            assert!(p.relevance.contains("{\"score\""), "{task}");
        }
        assert!(PromptTemplates::builtin("nope").is_err());
    }

    #[test]
    fn missing_variant_falls_back_to_default() {
        let m = PromptTemplates::builtin("multihop").unwrap();
        assert_eq!(m.corpus, PromptTemplates::default().corpus);
        assert_ne!(m.query, PromptTemplates::default().query);
    }

    #[test]
    fn directory_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("default")).unwrap();
        std::fs::create_dir_all(dir.path().join("mine")).unwrap();
        for f in ["corpus", "query", "rerank"] {
            std::fs::write(dir.path().join("default").join(format!("{f}.txt")), f).unwrap();
        }
        std::fs::write(dir.path().join("mine/query.txt"), "custom {query}").unwrap();
        let p = PromptTemplates::from_dir(dir.path(), "mine").unwrap();
        assert_eq!(p.query, "custom {query}");
        assert_eq!(p.corpus, "corpus");
        assert!(PromptTemplates::from_dir(dir.path().join("absent"), "x").is_err());
    }
}
