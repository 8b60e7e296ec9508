//! Artifact filenames and their readers and writers.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use patchrep::bpe::Vocab;
use patchrep::config::Config;
use patchrep::graph::StaticGraph;
use patchrep::ingest::PreprocessedPatch;
use patchrep::pipeline::{preprocess_all, read_jsonl, record_id, write_jsonl, Artifacts, PreprocessReport, Prepared, VectorRecord};
use patchrep::pretraining::StepLog;
use patchrep::tensor::checkpoint;
use patchrep::Model;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::Global;

pub mod files {
    pub const PREPROCESSED: &str = "preprocessed.jsonl";
    pub const PREPROCESSED_CORRECTNESS: &str = "preprocessed_correctness.jsonl";
    pub const PREPROCESS_REPORT: &str = "preprocess_report.json";
    pub const VOCAB: &str = "vocab.json";
    pub const STATIC_GRAPH: &str = "static_graph.json";
    pub const PRETRAIN: &str = "pretrain.ckpt";
    pub const DESC: &str = "desc.ckpt";
    pub const CORRECTNESS: &str = "correctness.ckpt";
    pub const PRETRAIN_LOG: &str = "pretrain_log.csv";
    pub const DESC_LOG: &str = "finetune_desc_log.csv";
    pub const CORRECTNESS_LOG: &str = "finetune_correctness_log.csv";
    pub const EMBEDDINGS: &str = "embeddings.jsonl";
    pub const PREDICTIONS: &str = "predictions.jsonl";
    pub const CLASSIFICATIONS: &str = "classifications.jsonl";
    pub const RETRIEVAL_INDEX: &str = "retrieval_index.json";
    pub const RETRIEVALS: &str = "retrievals.jsonl";
    pub const EVAL: &str = "eval.json";
}

/// Any corpus line: generation and correctness records share this shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub diff: String,
    #[serde(default)]
    pub original: Option<String>,
    #[serde(default)]
    pub msg: Option<String>,
    #[serde(default)]
    pub bug_report: Option<String>,
    #[serde(default)]
    pub label: Option<u8>,
}

/// One preprocessed single-file patch with the fields of its record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedDoc {
    pub id: String,
    pub record: usize,
    pub parsed: bool,
    pub patch: PreprocessedPatch,
    #[serde(default)]
    pub msg: Option<String>,
    #[serde(default)]
    pub bug_report: Option<String>,
    #[serde(default)]
    pub label: Option<u8>,
}

impl PreparedDoc {
    pub fn prepared(&self) -> Prepared {
        Prepared {
            id: self.id.clone(),
            record: self.record,
            patch: self.patch.clone(),
            parsed: self.parsed,
        }
    }
}

pub fn load_config(g: &Global) -> Result<Config, CliError> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| CliError::InvalidConfig("--config is required".into()))?;
    let mut cfg = Config::load(path)?;
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

pub fn out_path(g: &Global, name: &str) -> PathBuf {
    g.out.join(name)
}

pub fn ensure_out(g: &Global) -> Result<(), CliError> {
    fs::create_dir_all(&g.out).map_err(|e| CliError::io(&g.out, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::BadRecord(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    write_jsonl(path, items).map_err(|e| CliError::io(path, e))
}

pub fn required<'a>(v: &'a Option<String>, key: &str) -> Result<&'a str, CliError> {
    v.as_deref().ok_or_else(|| CliError::MissingConfigKey(key.into()))
}

/// Preprocesses raw records, keeping each record's message, report and label.
pub fn prepare(records: &[RawRecord]) -> (Vec<PreparedDoc>, PreprocessReport) {
    let items: Vec<_> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (record_id(&r.id, i), r.diff.clone(), r.original.clone()))
        .collect();
    let (prepared, report) = preprocess_all(&items);
    let docs = prepared
        .into_iter()
        .map(|p| {
            let r = &records[p.record];
            PreparedDoc {
                id: p.id,
                record: p.record,
                parsed: p.parsed,
                patch: p.patch,
                msg: r.msg.clone(),
                bug_report: r.bug_report.clone(),
                label: r.label,
            }
        })
        .collect();
    (docs, report)
}

pub fn read_records(path: &Path) -> Result<Vec<RawRecord>, CliError> {
    Ok(read_jsonl(path)?)
}

pub fn read_docs(path: &Path) -> Result<Vec<PreparedDoc>, CliError> {
    Ok(read_jsonl(path)?)
}

/// Preprocessed generation and correctness sets; a set that was not
/// configured comes back empty.
pub fn training_docs(g: &Global) -> Result<(Vec<PreparedDoc>, Vec<PreparedDoc>), CliError> {
    let gen = out_path(g, files::PREPROCESSED);
    let cor = out_path(g, files::PREPROCESSED_CORRECTNESS);
    if !gen.exists() && !cor.exists() {
        return Err(CliError::FileNotFound(format!("{} (run preprocess first)", gen.display())));
    }
    let load = |p: &Path| if p.exists() { read_docs(p) } else { Ok(Vec::new()) };
    Ok((load(&gen)?, load(&cor)?))
}

pub fn load_artifacts(g: &Global) -> Result<Artifacts, CliError> {
    let vocab: Vocab = read_json(&out_path(g, files::VOCAB))?;
    let static_graph: StaticGraph = read_json(&out_path(g, files::STATIC_GRAPH))?;
    Ok(Artifacts { vocab, static_graph })
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.as_os_str().to_string_lossy();
    (PathBuf::from(format!("{s}.json")), PathBuf::from(format!("{s}.bin")))
}

pub fn checkpoint_exists(stem: &Path) -> bool {
    let (m, b) = stem_paths(stem);
    m.exists() && b.exists()
}

pub fn save_model(model: &Model, stem: &Path) -> Result<(), CliError> {
    let (m, b) = stem_paths(stem);
    checkpoint::save(&model.store, &m, &b)?;
    Ok(())
}

/// Fresh model of the configured shape with weights from `stem`.
pub fn load_model(cfg: &Config, art: &Artifacts, stem: &Path) -> Result<Model, CliError> {
    let (m, b) = stem_paths(stem);
    for p in [&m, &b] {
        if !p.exists() {
            return Err(CliError::FileNotFound(p.display().to_string()));
        }
    }
    let mut model = Model::new(&cfg.model, &cfg.gcn, art.vocab.len(), cfg.train.seed);
    checkpoint::load_into(&mut model.store, &m, &b)?;
    Ok(model)
}

/// Weights to start fine-tuning from: the pre-trained checkpoint, or a
/// fresh model when there is none.
pub fn initial_model(g: &Global, cfg: &Config, art: &Artifacts) -> Result<Model, CliError> {
    let stem = out_path(g, files::PRETRAIN);
    if checkpoint_exists(&stem) {
        load_model(cfg, art, &stem)
    } else {
        log::warn!("no pre-trained checkpoint at {}; starting from random weights", stem.display());
        Ok(Model::new(&cfg.model, &cfg.gcn, art.vocab.len(), cfg.train.seed))
    }
}

pub fn write_log(path: &Path, log: &[StepLog]) -> Result<(), CliError> {
    let mut s = String::from("step,loss,lr\n");
    for l in log {
        s.push_str(&format!("{},{},{}\n", l.step, l.loss, l.lr));
    }
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}

/// Precomputed bug-report vectors by id.
pub fn bug_vectors(cfg: &Config) -> Result<HashMap<String, Vec<f64>>, CliError> {
    match &cfg.data.bug_vectors {
        None => Ok(HashMap::new()),
        Some(p) => Ok(read_jsonl::<VectorRecord>(Path::new(p))?
            .into_iter()
            .map(|r| (r.id, r.vec))
            .collect()),
    }
}
