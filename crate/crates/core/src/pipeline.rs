//! Corpus records, batch preprocessing with a report, and the shared
//! artifacts (vocabulary and static graph) built from a training corpus.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpe::{train_bpe_with_alphabet, BpeError, Vocab};
use crate::config::Config;
use crate::graph::{build_static_graph, prune_or_keep, StaticGraph};
use crate::ingest::{preprocess_patch, preprocess_sequence_only, split_file_diffs, PreprocessError, PreprocessedPatch};
use crate::minilang::MiniLangParser;
use crate::model::{changed_tokens, Featurizer};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Record {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("no usable records in {0}")]
    NoRecords(String),
    #[error(transparent)]
    Bpe(#[from] BpeError),
}

/// `{"diff", "msg"}` with optional `"id"` and `"original"` (full before-file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub diff: String,
    #[serde(default)]
    pub msg: String,
    #[serde(default)]
    pub original: Option<String>,
}

/// `{"diff", "bug_report", "label"}` with optional `"id"` and `"original"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub diff: String,
    #[serde(default)]
    pub bug_report: Option<String>,
    pub label: u8,
    #[serde(default)]
    pub original: Option<String>,
}

/// `{"id", "vec"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub id: String,
    pub vec: Vec<f64>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let shown = path.display().to_string();
    if !path.exists() {
        return Err(PipelineError::FileNotFound(shown));
    }
    let f = fs::File::open(path).map_err(|source| PipelineError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| PipelineError::Io {
            path: shown.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| PipelineError::Record {
            path: shown.clone(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).map_err(std::io::Error::other)?);
        s.push('\n');
    }
    fs::write(path, s)
}

/// One single-file patch after preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    /// Index of the record it came from.
    pub record: usize,
    pub patch: PreprocessedPatch,
    /// Both sides parsed; otherwise the patch is sequence-only.
    pub parsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub records: usize,
    pub files: usize,
    /// Files whose before and after code both parsed.
    pub parsed: usize,
    /// Files kept without graphs after a parse error.
    pub sequence_only: usize,
    /// Files dropped because the diff itself was unusable.
    pub failed: usize,
    pub parse_failure_rate: f64,
    pub parse_errors: Vec<Failure>,
    pub diff_errors: Vec<Failure>,
}

/// Preprocesses `(id, diff, original)` items. Multi-file diffs become one
/// patch per file (`id#k`). Parse failures fall back to sequence-only.
pub fn preprocess_all(items: &[(String, String, Option<String>)]) -> (Vec<Prepared>, PreprocessReport) {
    let mut out = Vec::new();
    let mut rep = PreprocessReport {
        records: items.len(),
        ..Default::default()
    };
    for (r, (id, diff, original)) in items.iter().enumerate() {
        let files = split_file_diffs(diff);
        let files = if files.is_empty() { vec![diff.clone()] } else { files };
        let many = files.len() > 1;
        for (k, text) in files.iter().enumerate() {
            rep.files += 1;
            let fid = if many { format!("{id}#{k}") } else { id.clone() };
            // An original file only makes sense for a single-file diff.
            let orig = if many { None } else { original.as_deref() };
            match preprocess_patch(text, orig, &MiniLangParser) {
                Ok(patch) => {
                    rep.parsed += 1;
                    out.push(Prepared {
                        id: fid,
                        record: r,
                        patch,
                        parsed: true,
                    });
                }
                Err(PreprocessError::Parse { side, source }) => match preprocess_sequence_only(text, orig) {
                    Ok(patch) => {
                        log::info!("{fid}: {side} code does not parse ({source}); using sequence only");
                        rep.sequence_only += 1;
                        rep.parse_errors.push(Failure {
                            id: fid.clone(),
                            error: format!("{side}: {source}"),
                        });
                        out.push(Prepared {
                            id: fid,
                            record: r,
                            patch,
                            parsed: false,
                        });
                    }
                    Err(e) => {
                        rep.failed += 1;
                        rep.diff_errors.push(Failure { id: fid, error: e.to_string() });
                    }
                },
                Err(PreprocessError::Ingest(e)) => {
                    log::warn!("{fid}: {e}");
                    rep.failed += 1;
                    rep.diff_errors.push(Failure { id: fid, error: e.to_string() });
                }
            }
        }
    }
    let attempted = rep.parsed + rep.sequence_only;
    rep.parse_failure_rate = if attempted == 0 {
        0.0
    } else {
        rep.sequence_only as f64 / attempted as f64
    };
    (out, rep)
}

pub fn record_id(id: &Option<String>, index: usize) -> String {
    id.clone().unwrap_or_else(|| format!("{index}"))
}

/// Vocabulary and static graph shared by every model built on a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub vocab: Vocab,
    pub static_graph: StaticGraph,
}

/// Texts the merges are learned from: both code sides of every patch.
pub fn vocab_corpus(patches: &[Prepared]) -> Vec<String> {
    patches
        .iter()
        .flat_map(|p| [p.patch.before.clone(), p.patch.after.clone()])
        .collect()
}

/// Merges come from code only; characters of `extra` texts (messages, bug
/// reports) join the alphabet so they never fall back to `UNK`.
pub fn build_vocab(patches: &[Prepared], extra: &[String], size: usize) -> Result<Vocab, PipelineError> {
    Ok(train_bpe_with_alphabet(&vocab_corpus(patches), extra, size)?)
}

/// Static graph from the pruned before and after graphs of the parsed
/// training patches.
pub fn build_static(patches: &[Prepared], n_g: usize) -> StaticGraph {
    let graphs: Vec<_> = patches
        .iter()
        .filter(|p| p.parsed)
        .flat_map(|p| {
            let changed: HashSet<String> = changed_tokens(&p.patch);
            [
                prune_or_keep(&p.patch.before_graph, &changed),
                prune_or_keep(&p.patch.after_graph, &changed),
            ]
        })
        .collect();
    build_static_graph(&graphs, n_g)
}

impl Artifacts {
    pub fn build(cfg: &Config, patches: &[Prepared], extra: &[String]) -> Result<Artifacts, PipelineError> {
        Ok(Artifacts {
            vocab: build_vocab(patches, extra, cfg.data.vocab_size)?,
            static_graph: build_static(patches, cfg.model.n_g),
        })
    }

    pub fn featurizer<'a>(&'a self, cfg: &'a Config) -> Featurizer<'a> {
        Featurizer {
            vocab: &self.vocab,
            static_graph: Some(&self.static_graph),
            l_max: cfg.model.l_max,
            gcn: &cfg.gcn,
        }
    }
}
