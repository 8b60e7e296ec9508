//! Fine-tuning heads: description generation, patch-correctness
//! classification and embedding retrieval.

use patchrep_tensor::{Adam, Result as TResult, Scalar, Tape, TensorError, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpe::{Padded, PAD};
use crate::fusion::AblationFlags;
use crate::model::{constant_row, teacher_forcing, EncodedPatch, PatchModel};
use crate::nn::Ctx;
use crate::pretraining::{batch_indices, batch_mean, derive_seed, train_step};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("sample {0} has no bug report")]
    MissingBugReport(String),
    #[error("bug-report vector of sample {id} has width {got}, expected {want}")]
    BugVectorWidth { id: String, got: usize, want: usize },
    #[error("length mismatch: {left} predictions, {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("retrieval index is empty")]
    EmptyIndex,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Cross-entropy of the message given the patch, teacher forced.
pub fn generation_loss<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    model: &PatchModel<T>,
    x: &EncodedPatch,
    msg: &[usize],
    flags: AblationFlags,
) -> TResult<Var<'t, T>> {
    let emb = model.encode(cx, x, flags)?;
    let (input, target) = teacher_forcing(msg, model.cfg.l_max);
    let logits = model.decoder_logits(cx, emb.memory, &emb.memory_mask, &input.ids, &input.mask)?;
    logits.cross_entropy(&target, PAD)
}

/// A generation training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationExample {
    pub id: String,
    pub patch: EncodedPatch,
    /// Message ids without specials.
    pub msg: Vec<usize>,
}

/// Mean generation loss over `batch`.
pub fn generation_batch_loss<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    model: &PatchModel<T>,
    batch: &[&GenerationExample],
    flags: AblationFlags,
) -> TResult<Var<'t, T>> {
    let losses = batch
        .iter()
        .map(|e| generation_loss(cx, model, &e.patch, &e.msg, flags))
        .collect::<TResult<Vec<_>>>()?;
    batch_mean(losses)
}

/// Fine-tunes for description generation; returns the loss of every step.
pub fn finetune_generation<T: Scalar>(
    model: &mut PatchModel<T>,
    adam: &mut Adam<T>,
    data: &[GenerationExample],
    steps: usize,
    batch_size: usize,
    flags: AblationFlags,
    seed: u64,
) -> TResult<Vec<f64>> {
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch: Vec<&GenerationExample> = batch_indices(data.len(), batch_size, step).into_iter().map(|i| &data[i]).collect();
        let l = train_step(model, adam, true, derive_seed(seed, step as u64, u64::MAX, 2), |cx, m| {
            generation_batch_loss(cx, m, &batch, flags)
        })?;
        log::debug!("finetune-desc step {step} loss {l:.6}");
        losses.push(l);
    }
    Ok(losses)
}

/// Bug report as text (encoded with the sequence encoder) or as a
/// precomputed vector.
#[derive(Debug, Clone, PartialEq)]
pub enum BugReport {
    Text(Padded),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessSample {
    pub id: String,
    pub patch: EncodedPatch,
    pub bug_report: Option<BugReport>,
    /// 1 = correct patch.
    pub label: u8,
}

fn bug_vector<'t, T: Scalar>(cx: &Ctx<'t, '_, T>, model: &PatchModel<T>, s: &CorrectnessSample) -> Result<Var<'t, T>, HeadError> {
    match &s.bug_report {
        None => Err(HeadError::MissingBugReport(s.id.clone())),
        Some(BugReport::Text(p)) => Ok(model.embed_text(cx, p)?),
        Some(BugReport::Vector(v)) if v.len() != model.cfg.d_b => Err(HeadError::BugVectorWidth {
            id: s.id.clone(),
            got: v.len(),
            want: model.cfg.d_b,
        }),
        Some(BugReport::Vector(v)) => Ok(constant_row(cx.tape, v)),
    }
}

/// `ŷ` on the tape.
pub fn correctness_prob<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    model: &PatchModel<T>,
    s: &CorrectnessSample,
    flags: AblationFlags,
) -> Result<Var<'t, T>, HeadError> {
    let emb = model.encode(cx, &s.patch, flags)?;
    let bug = bug_vector(cx, model, s)?;
    Ok(model.classifier(cx, emb.pooled, bug)?)
}

/// `ŷ ∈ (0, 1)`: probability that the patch is correct.
pub fn classify_correctness<T: Scalar>(model: &PatchModel<T>, s: &CorrectnessSample, flags: AblationFlags) -> Result<f64, HeadError> {
    let tape = Tape::new();
    let cx = Ctx::eval(&tape, &model.store);
    Ok(correctness_prob(&cx, model, s, flags)?.item().to_f64_lossy())
}

/// Summed binary cross-entropy over `batch`.
pub fn correctness_batch_loss<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    model: &PatchModel<T>,
    batch: &[&CorrectnessSample],
    flags: AblationFlags,
) -> Result<Var<'t, T>, HeadError> {
    let probs = batch
        .iter()
        .map(|s| correctness_prob(cx, model, s, flags))
        .collect::<Result<Vec<_>, _>>()?;
    let y: Vec<T> = batch.iter().map(|s| T::from_u8(s.label).unwrap()).collect();
    Ok(cx.tape.concat_rows(&probs)?.bce_sum(&y)?)
}

/// Fine-tunes the classifier together with the encoder; returns the loss of
/// every step.
pub fn finetune_correctness<T: Scalar>(
    model: &mut PatchModel<T>,
    adam: &mut Adam<T>,
    data: &[CorrectnessSample],
    steps: usize,
    batch_size: usize,
    flags: AblationFlags,
    seed: u64,
) -> Result<Vec<f64>, HeadError> {
    for s in data {
        if s.bug_report.is_none() {
            return Err(HeadError::MissingBugReport(s.id.clone()));
        }
    }
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch: Vec<&CorrectnessSample> = batch_indices(data.len(), batch_size, step).into_iter().map(|i| &data[i]).collect();
        let l = train_step(model, adam, true, derive_seed(seed, step as u64, u64::MAX, 3), |cx, m| {
            correctness_batch_loss(cx, m, &batch, flags).map_err(|e| match e {
                HeadError::Tensor(t) => t,
                other => unreachable!("validated before training: {other}"),
            })
        })?;
        log::debug!("finetune-correctness step {step} loss {l:.6}");
        losses.push(l);
    }
    Ok(losses)
}

/// `L = -Σ y ln ŷ + (1 - y) ln(1 - ŷ)` with `ŷ` clipped to `[1e-7, 1 - 1e-7]`.
pub fn correctness_loss(y_hat: &[f64], y: &[f64]) -> Result<f64, HeadError> {
    if y_hat.len() != y.len() {
        return Err(HeadError::LengthMismatch {
            left: y_hat.len(),
            right: y.len(),
        });
    }
    Ok(y_hat
        .iter()
        .zip(y)
        .map(|(p, y)| {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    /// Unit length, or all zeros for a zero input.
    pub vec: Vec<f64>,
    pub message: String,
}

/// Training-set embeddings with their messages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit<'a> {
    pub id: &'a str,
    pub message: &'a str,
    pub score: f64,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

impl RetrievalIndex {
    pub fn insert(&mut self, id: impl Into<String>, vec: &[f64], message: impl Into<String>) {
        self.entries.push(IndexEntry {
            id: id.into(),
            vec: normalized(vec),
            message: message.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest cosine similarity; ties go to the smallest id. A zero query
    /// scores 0 against everything.
    pub fn retrieve(&self, query: &[f64]) -> Result<Hit<'_>, HeadError> {
        let q = normalized(query);
        let mut best: Option<(&IndexEntry, f64)> = None;
        for e in &self.entries {
            let s: f64 = e.vec.iter().zip(&q).map(|(a, b)| a * b).sum();
            let better = match best {
                None => true,
                Some((b, bs)) => s > bs || (s == bs && e.id < b.id),
            };
            if better {
                best = Some((e, s));
            }
        }
        let (e, score) = best.ok_or(HeadError::EmptyIndex)?;
        Ok(Hit {
            id: &e.id,
            message: &e.message,
            score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_endpoints() {
        assert!(correctness_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap() <= 3e-6);
        let l = correctness_loss(&[0.5; 4], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((l - 4.0 * 2f64.ln()).abs() < 1e-12);
        assert!(matches!(
            correctness_loss(&[0.5], &[]),
            Err(HeadError::LengthMismatch { left: 1, right: 0 })
        ));
    }

    #[test]
    fn retrieval_basics() {
        let mut idx = RetrievalIndex::default();
        assert!(matches!(idx.retrieve(&[1.0]), Err(HeadError::EmptyIndex)));
        idx.insert("b", &[1.0, 0.0, 0.0], "second");
        idx.insert("a", &[0.0, 2.0, 0.0], "first");
        let h = idx.retrieve(&[0.0, 3.0, 0.0]).unwrap();
        assert_eq!((h.id, h.message), ("a", "first"));
        assert!((h.score - 1.0).abs() < 1e-12);
        let h = idx.retrieve(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(h.id, "a");
        assert_eq!(h.score, 0.0);
    }
}
