use std::collections::{HashMap, HashSet};
use std::path::Path;

use patchrep::bpe::normalize_ws;
use patchrep::config::Config;
use patchrep::heads::{
    classify_correctness, finetune_correctness as run_finetune_correctness, finetune_generation, BugReport, CorrectnessSample,
    GenerationExample, RetrievalIndex,
};
use patchrep::metrics::{plus_minus_recall, text_scores};
use patchrep::model::{EncodedPatch, Featurizer};
use patchrep::pipeline::{build_static, build_vocab as learn_vocab, read_jsonl, Artifacts, Prepared, VectorRecord};
use patchrep::pretraining::{decode, run_pretraining, StepLog};
use patchrep::tensor::Adam;
use patchrep::Model;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CliError;
use crate::store::{self, files, out_path, PreparedDoc};
use crate::{EvalArgs, Global, Input};

pub fn preprocess(g: &Global) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    if cfg.data.generation.is_none() && cfg.data.correctness.is_none() {
        return Err(CliError::MissingConfigKey("data.generation".into()));
    }
    store::ensure_out(g)?;
    let mut report = serde_json::Map::new();
    for (key, source, target) in [
        ("generation", &cfg.data.generation, files::PREPROCESSED),
        ("correctness", &cfg.data.correctness, files::PREPROCESSED_CORRECTNESS),
    ] {
        let Some(path) = source else { continue };
        let records = store::read_records(Path::new(path))?;
        let (docs, rep) = store::prepare(&records);
        log::info!("{key}: {} of {} files parsed, {} sequence-only, {} failed", rep.parsed, rep.files, rep.sequence_only, rep.failed);
        store::write_lines(&out_path(g, target), &docs)?;
        report.insert(key.into(), serde_json::to_value(rep).expect("report serializes"));
    }
    let report = serde_json::Value::Object(report);
    store::write_json(&out_path(g, files::PREPROCESS_REPORT), &report)?;
    println!("{report}");
    Ok(())
}

fn all_docs(g: &Global) -> Result<Vec<PreparedDoc>, CliError> {
    let (gen, cor) = store::training_docs(g)?;
    Ok(gen.into_iter().chain(cor).collect())
}

pub fn build_vocab(g: &Global) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    let docs = all_docs(g)?;
    let prepared: Vec<Prepared> = docs.iter().map(PreparedDoc::prepared).collect();
    let extra: Vec<String> = docs
        .iter()
        .flat_map(|d| [d.msg.clone(), d.bug_report.clone()])
        .flatten()
        .collect();
    let vocab = learn_vocab(&prepared, &extra, cfg.data.vocab_size)?;
    log::info!("vocabulary of {} tokens ({} merges)", vocab.len(), vocab.merges().len());
    store::write_json(&out_path(g, files::VOCAB), &vocab)
}

pub fn build_static_graph(g: &Global) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    let prepared: Vec<Prepared> = all_docs(g)?.iter().map(PreparedDoc::prepared).collect();
    let sg = build_static(&prepared, cfg.model.n_g);
    log::info!("static graph with {} nodes", sg.len());
    store::write_json(&out_path(g, files::STATIC_GRAPH), &sg)
}

fn featurize(f: &Featurizer<'_>, docs: &[PreparedDoc]) -> Vec<EncodedPatch> {
    docs.iter().map(|d| f.featurize(&d.patch)).collect()
}

pub fn pretrain(g: &Global) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    let art = store::load_artifacts(g)?;
    let mut seen = HashSet::new();
    let docs: Vec<PreparedDoc> = all_docs(g)?
        .into_iter()
        .filter(|d| seen.insert((d.patch.before.clone(), d.patch.after.clone())))
        .collect();
    if docs.is_empty() {
        return Err(CliError::NoRecords("no preprocessed patches to pre-train on".into()));
    }
    let data = featurize(&art.featurizer(&cfg), &docs);
    let mut model = Model::new(&cfg.model, &cfg.gcn, art.vocab.len(), cfg.train.seed);
    let steps = cfg.total_steps(data.len());
    log::info!("pre-training on {} patches for {steps} steps ({})", data.len(), g.flags().name());
    let log = run_pretraining(&mut model, &data, steps, cfg.train.batch_size, cfg.train.lr, cfg.train.mask_rate, g.flags(), cfg.train.seed)?;
    finish_training(g, &model, files::PRETRAIN, files::PRETRAIN_LOG, &log)
}

fn finish_training(g: &Global, model: &Model, ckpt: &str, log_file: &str, log: &[StepLog]) -> Result<(), CliError> {
    store::save_model(model, &out_path(g, ckpt))?;
    store::write_log(&out_path(g, log_file), log)?;
    if let Some(l) = log.last() {
        log::info!("final loss {:.4} after {} steps", l.loss, log.len());
    }
    Ok(())
}

fn step_logs(losses: Vec<f64>, lr: f64) -> Vec<StepLog> {
    losses
        .into_iter()
        .enumerate()
        .map(|(step, loss)| StepLog { step, loss, lr })
        .collect()
}

pub fn finetune_desc(g: &Global) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    let art = store::load_artifacts(g)?;
    let (docs, _) = store::training_docs(g)?;
    let f = art.featurizer(&cfg);
    let mut data = Vec::new();
    for d in &docs {
        match d.msg.as_deref().map(str::trim) {
            Some(m) if !m.is_empty() => data.push(GenerationExample {
                id: d.id.clone(),
                patch: f.featurize(&d.patch),
                msg: art.vocab.encode_ids(m),
            }),
            _ => log::warn!("{}: empty message; record skipped", d.id),
        }
    }
    if data.is_empty() {
        return Err(CliError::NoRecords("no generation records with messages".into()));
    }
    let mut model = store::initial_model(g, &cfg, &art)?;
    let mut adam = Adam::new(cfg.train.lr);
    let steps = cfg.total_steps(data.len());
    log::info!("fine-tuning generation on {} pairs for {steps} steps", data.len());
    let losses = finetune_generation(&mut model, &mut adam, &data, steps, cfg.train.batch_size, g.flags(), cfg.train.seed)?;
    finish_training(g, &model, files::DESC, files::DESC_LOG, &step_logs(losses, cfg.train.lr))
}

/// Correctness samples; records without any bug report are skipped.
fn correctness_samples(cfg: &Config, f: &Featurizer<'_>, docs: &[PreparedDoc]) -> Result<Vec<CorrectnessSample>, CliError> {
    let vectors = store::bug_vectors(cfg)?;
    let mut out = Vec::new();
    for d in docs {
        let report = match (&d.bug_report, vectors.get(&d.id)) {
            (Some(t), _) if !t.trim().is_empty() => BugReport::Text(f.text(t)),
            (_, Some(v)) => BugReport::Vector(v.clone()),
            _ => {
                log::warn!("{}: no bug report; record skipped", d.id);
                continue;
            }
        };
        out.push(CorrectnessSample {
            id: d.id.clone(),
            patch: f.featurize(&d.patch),
            bug_report: Some(report),
            label: d.label.unwrap_or(0),
        });
    }
    Ok(out)
}

pub fn finetune_correctness(g: &Global) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    let art = store::load_artifacts(g)?;
    let (_, docs) = store::training_docs(g)?;
    if let Some(d) = docs.iter().find(|d| d.label.is_none()) {
        return Err(CliError::BadRecord(format!("{}: correctness record without label", d.id)));
    }
    let data = correctness_samples(&cfg, &art.featurizer(&cfg), &docs)?;
    if data.is_empty() {
        return Err(CliError::NoRecords("no labeled correctness records".into()));
    }
    let mut model = store::initial_model(g, &cfg, &art)?;
    let mut adam = Adam::new(cfg.train.lr);
    let steps = cfg.total_steps(data.len());
    log::info!("fine-tuning correctness on {} samples for {steps} steps", data.len());
    let losses = run_finetune_correctness(&mut model, &mut adam, &data, steps, cfg.train.batch_size, g.flags(), cfg.train.seed)?;
    finish_training(g, &model, files::CORRECTNESS, files::CORRECTNESS_LOG, &step_logs(losses, cfg.train.lr))
}

/// Patches to run inference on: `--data` records, or the preprocessed
/// training set selected by `correctness`.
fn inference_docs(g: &Global, input: &Input, correctness: bool) -> Result<Vec<PreparedDoc>, CliError> {
    match &input.data {
        Some(p) => {
            let (docs, rep) = store::prepare(&store::read_records(p)?);
            for f in &rep.diff_errors {
                log::warn!("{}: {}", f.id, f.error);
            }
            Ok(docs)
        }
        None => {
            let (gen, cor) = store::training_docs(g)?;
            Ok(if correctness { cor } else { gen })
        }
    }
}

/// Checkpoint from `--checkpoint`, else the first of `defaults` on disk.
fn inference_model(g: &Global, input: &Input, cfg: &Config, art: &Artifacts, defaults: &[&str]) -> Result<Model, CliError> {
    if let Some(stem) = &input.checkpoint {
        return store::load_model(cfg, art, stem);
    }
    for name in defaults {
        let stem = out_path(g, name);
        if store::checkpoint_exists(&stem) {
            return store::load_model(cfg, art, &stem);
        }
    }
    Err(CliError::FileNotFound(format!("{}.json", out_path(g, defaults[0]).display())))
}

fn pooled(model: &Model, x: &EncodedPatch, g: &Global) -> Result<Vec<f64>, CliError> {
    Ok(model.embed(x, g.flags())?.pooled.iter().map(|v| *v as f64).collect())
}

pub fn embed(g: &Global, input: &Input) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    let art = store::load_artifacts(g)?;
    let model = inference_model(g, input, &cfg, &art, &[files::DESC, files::PRETRAIN])?;
    let docs = inference_docs(g, input, false)?;
    let f = art.featurizer(&cfg);
    let out = docs
        .iter()
        .map(|d| {
            Ok(VectorRecord {
                id: d.id.clone(),
                vec: pooled(&model, &f.featurize(&d.patch), g)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    store::ensure_out(g)?;
    store::write_lines(&out_path(g, files::EMBEDDINGS), &out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Prediction {
    id: String,
    prediction: String,
}

fn emit<T: Serialize>(path: &Path, lines: &[T]) -> Result<(), CliError> {
    for l in lines {
        println!("{}", serde_json::to_string(l).expect("prediction serializes"));
    }
    store::write_lines(path, lines)
}

pub fn generate(g: &Global, input: &Input) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    let art = store::load_artifacts(g)?;
    let model = inference_model(g, input, &cfg, &art, &[files::DESC])?;
    let f = art.featurizer(&cfg);
    let mut out = Vec::new();
    for d in inference_docs(g, input, false)? {
        let emb = model.embed(&f.featurize(&d.patch), g.flags())?;
        let ids = decode(&model, &emb, cfg.decode.beam, cfg.decode.max_out);
        out.push(Prediction {
            id: d.id,
            prediction: art.vocab.decode(&ids)?,
        });
    }
    store::ensure_out(g)?;
    emit(&out_path(g, files::PREDICTIONS), &out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Classification {
    id: String,
    probability: f64,
    /// 1 = predicted correct.
    prediction: u8,
}

pub fn classify(g: &Global, input: &Input) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    let art = store::load_artifacts(g)?;
    let model = inference_model(g, input, &cfg, &art, &[files::CORRECTNESS])?;
    let docs = inference_docs(g, input, true)?;
    let samples = correctness_samples(&cfg, &art.featurizer(&cfg), &docs)?;
    let mut out = Vec::new();
    for s in &samples {
        let p = classify_correctness(&model, s, g.flags())?;
        out.push(Classification {
            id: s.id.clone(),
            probability: p,
            prediction: u8::from(p >= 0.5),
        });
    }
    store::ensure_out(g)?;
    emit(&out_path(g, files::CLASSIFICATIONS), &out)
}

#[derive(Debug, Serialize)]
struct Retrieval<'a> {
    id: String,
    prediction: &'a str,
    neighbor: &'a str,
    score: f64,
}

pub fn retrieve(g: &Global, input: &Input) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    let art = store::load_artifacts(g)?;
    let model = inference_model(g, input, &cfg, &art, &[files::DESC, files::PRETRAIN])?;
    let f = art.featurizer(&cfg);
    let (train, _) = store::training_docs(g)?;
    let mut index = RetrievalIndex::default();
    for d in &train {
        let v = pooled(&model, &f.featurize(&d.patch), g)?;
        index.insert(d.id.clone(), &v, d.msg.clone().unwrap_or_default());
    }
    store::write_json(&out_path(g, files::RETRIEVAL_INDEX), &index)?;
    let queries = match &input.data {
        Some(_) => inference_docs(g, input, false)?,
        None => train,
    };
    let mut vecs = Vec::new();
    for d in &queries {
        vecs.push((d.id.clone(), pooled(&model, &f.featurize(&d.patch), g)?));
    }
    let mut out = Vec::new();
    for (id, v) in vecs {
        let hit = index.retrieve(&v)?;
        out.push(Retrieval {
            id,
            prediction: hit.message,
            neighbor: hit.id,
            score: hit.score,
        });
    }
    emit(&out_path(g, files::RETRIEVALS), &out)
}

#[derive(Debug, Deserialize)]
struct Reference {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    msg: Option<String>,
    #[serde(default)]
    label: Option<u8>,
}

#[derive(Debug, Deserialize)]
struct Scored {
    id: String,
    probability: f64,
}

/// Records keyed by id (line index when absent).
fn by_id(path: &Path) -> Result<HashMap<String, Reference>, CliError> {
    let refs: Vec<Reference> = read_jsonl(path)?;
    Ok(refs
        .into_iter()
        .enumerate()
        .map(|(i, r)| (patchrep::pipeline::record_id(&r.id, i), r))
        .collect())
}

/// Reference for a prediction id; ids of split multi-file records
/// (`id#k`) fall back to their record.
fn lookup<'a>(refs: &'a HashMap<String, Reference>, id: &str) -> Option<&'a Reference> {
    refs.get(id).or_else(|| id.rsplit_once('#').and_then(|(base, _)| refs.get(base)))
}

pub fn eval(g: &Global, a: &EvalArgs) -> Result<(), CliError> {
    let cfg = store::load_config(g)?;
    let default_preds = out_path(g, files::PREDICTIONS);
    let preds_path = a.predictions.clone().or_else(|| default_preds.exists().then_some(default_preds));
    let default_cls = out_path(g, files::CLASSIFICATIONS);
    let cls_path = a.classifications.clone().or_else(|| default_cls.exists().then_some(default_cls));
    if preds_path.is_none() && cls_path.is_none() {
        return Err(CliError::FileNotFound(format!("{} (nothing to evaluate)", out_path(g, files::PREDICTIONS).display())));
    }

    let mut report = patchrep::metrics::EvalReport::default();
    if let Some(p) = preds_path {
        let refs_path = match &a.references {
            Some(r) => r.clone(),
            None => store::required(&cfg.data.generation, "data.generation")?.into(),
        };
        let refs = by_id(&refs_path)?;
        let preds: Vec<Prediction> = read_jsonl(&p)?;
        let mut hyp = Vec::new();
        let mut gold = Vec::new();
        for pr in preds {
            let msg = lookup(&refs, &pr.id)
                .and_then(|r| r.msg.clone())
                .ok_or_else(|| CliError::BadRecord(format!("no reference message for {}", pr.id)))?;
            hyp.push(pr.prediction);
            gold.push(normalize_ws(&msg));
        }
        report = text_scores(&hyp, &gold)?;
    }
    if let Some(c) = cls_path {
        let labels = by_id(Path::new(store::required(&cfg.data.correctness, "data.correctness")?))?;
        let scored: Vec<Scored> = read_jsonl(&c)?;
        let mut probs = Vec::new();
        let mut ys = Vec::new();
        for s in scored {
            let y = lookup(&labels, &s.id)
                .and_then(|r| r.label)
                .ok_or_else(|| CliError::BadRecord(format!("no label for {}", s.id)))?;
            probs.push(s.probability);
            ys.push(y);
        }
        let (plus, minus) = plus_minus_recall(&probs, &ys, 0.5)?;
        report.plus_recall = plus;
        report.minus_recall = minus;
        report.n = report.n.max(probs.len());
    }
    store::ensure_out(g)?;
    store::write_json(&out_path(g, files::EVAL), &report)?;
    println!("{}", json!(report));
    Ok(())
}
