//! Run configuration: one JSON document with `data`, `model`, `gcn`,
//! `train` and `decode` sections.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::graph::{EdgeMode, GcnConfig, Pooling};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing config key {0}")]
    MissingConfigKey(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// JSON-lines `{"diff", "msg"}` records, optionally with `"id"` and
    /// `"original"`.
    pub generation: Option<String>,
    /// JSON-lines `{"diff", "bug_report", "label"}` records.
    pub correctness: Option<String>,
    /// JSON-lines `{"id", "vec"}` precomputed bug-report vectors.
    pub bug_vectors: Option<String>,
    /// Non-special BPE tokens to learn.
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_e: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub l_max: usize,
    pub n_g: usize,
    /// Width of precomputed bug-report vectors; `d_e` when reports are text.
    pub d_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    pub mask_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_out: usize,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub gcn: GcnConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

struct Section<'a> {
    name: &'static str,
    map: Option<&'a Map<String, Value>>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Value, name: &'static str) -> Result<Self, ConfigError> {
        match root.get(name) {
            None => Ok(Section { name, map: None }),
            Some(Value::Object(m)) => Ok(Section { name, map: Some(m) }),
            Some(_) => Err(ConfigError::Invalid {
                key: name.into(),
                reason: "expected an object".into(),
            }),
        }
    }

    fn key(&self, k: &str) -> String {
        format!("{}.{}", self.name, k)
    }

    fn raw(&self, k: &str) -> Option<&'a Value> {
        self.map.and_then(|m| m.get(k)).filter(|v| !v.is_null())
    }

    fn get<T: serde::de::DeserializeOwned>(&self, k: &str) -> Result<Option<T>, ConfigError> {
        self.raw(k)
            .map(|v| {
                serde_json::from_value(v.clone()).map_err(|e| ConfigError::Invalid {
                    key: self.key(k),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    fn req<T: serde::de::DeserializeOwned>(&self, k: &str) -> Result<T, ConfigError> {
        self.get(k)?.ok_or_else(|| ConfigError::MissingConfigKey(self.key(k)))
    }

    fn or<T: serde::de::DeserializeOwned>(&self, k: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(k)?.unwrap_or(default))
    }
}

fn check(ok: bool, key: &str, reason: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key: key.into(),
            reason: reason.into(),
        })
    }
}

impl Config {
    /// Reads the document; `model.d_e`, `model.n_heads`, `model.n_layers`
    /// and `model.l_max` are required, everything else has a default.
    pub fn from_value(root: &Value) -> Result<Config, ConfigError> {
        let data = Section::new(root, "data")?;
        let model = Section::new(root, "model")?;
        let gcn = Section::new(root, "gcn")?;
        let train = Section::new(root, "train")?;
        let decode = Section::new(root, "decode")?;

        let d_e: usize = model.req("d_e")?;
        let model_cfg = ModelConfig {
            d_e,
            n_heads: model.req("n_heads")?,
            n_layers: model.req("n_layers")?,
            dropout: model.or("dropout", 0.1)?,
            l_max: model.req("l_max")?,
            n_g: model.or("n_g", 2000)?,
            d_b: model.or("d_b", d_e)?,
        };
        check(model_cfg.d_e > 0, "model.d_e", "must be positive")?;
        check(
            model_cfg.n_heads > 0 && model_cfg.d_e.is_multiple_of(model_cfg.n_heads),
            "model.n_heads",
            "must divide model.d_e",
        )?;
        check(model_cfg.l_max >= 2, "model.l_max", "must be at least 2")?;
        check((0.0..1.0).contains(&model_cfg.dropout), "model.dropout", "must be in [0, 1)")?;

        let layers: usize = gcn.or("layers", 2)?;
        let gcn_cfg = GcnConfig {
            layers,
            alpha: gcn.or("alpha", 0.1)?,
            betas: gcn.or("betas", GcnConfig::default_betas(layers))?,
            pooling: gcn.or("pooling", Pooling::All)?,
            edges: gcn.or("edges", EdgeMode::Local)?,
        };
        check((0.0..=1.0).contains(&gcn_cfg.alpha), "gcn.alpha", "must be in [0, 1]")?;
        check(gcn_cfg.betas.len() == layers, "gcn.betas", "needs one entry per layer")?;
        check(gcn_cfg.betas.iter().all(|b| (0.0..=1.0).contains(b)), "gcn.betas", "must be in [0, 1]")?;

        let train_cfg = TrainConfig {
            lr: train.or("lr", 0.001)?,
            batch_size: train.or("batch_size", 8)?,
            epochs: train.or("epochs", 30)?,
            steps: train.get("steps")?,
            mask_rate: train.or("mask_rate", 0.15)?,
            seed: train.or("seed", 0)?,
        };
        check(train_cfg.batch_size > 0, "train.batch_size", "must be positive")?;
        check(
            train_cfg.mask_rate > 0.0 && train_cfg.mask_rate < 1.0,
            "train.mask_rate",
            "must be in (0, 1)",
        )?;

        let decode_cfg = DecodeConfig {
            beam: decode.or("beam", 3)?,
            max_out: decode.or("max_out", 32)?,
            workers: decode.or("workers", 1)?,
        };
        check(decode_cfg.beam > 0, "decode.beam", "must be at least 1")?;

        Ok(Config {
            data: DataConfig {
                generation: data.get("generation")?,
                correctness: data.get("correctness")?,
                bug_vectors: data.get("bug_vectors")?,
                vocab_size: data.or("vocab_size", 1000)?,
            },
            model: model_cfg,
            gcn: gcn_cfg,
            train: train_cfg,
            decode: decode_cfg,
        })
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        Config::from_value(&serde_json::from_str(text)?)
    }

    /// Loads a config file; relative data paths resolve against its folder.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Config::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.generation, &mut cfg.data.correctness, &mut cfg.data.bug_vectors]
            .into_iter()
            .flatten()
        {
            if Path::new(p.as_str()).is_relative() {
                *p = base.join(p.as_str()).display().to_string();
            }
        }
        Ok(cfg)
    }

    /// Number of optimizer steps for a dataset of `n` records.
    pub fn total_steps(&self, n: usize) -> usize {
        self.train
            .steps
            .unwrap_or_else(|| self.train.epochs * n.div_ceil(self.train.batch_size).max(1))
    }
}
