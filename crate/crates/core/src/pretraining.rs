//! Masked-token pre-training, the shared optimizer step, and greedy / beam
//! decoding.

use std::cmp::Ordering;

use patchrep_tensor::{Adam, Result, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bpe::{Padded, BOS, EOS, MASK, NUM_SPECIALS, PAD};
use crate::fusion::{AblationFlags, OwnedEmbedding};
use crate::model::{EncodedPatch, PatchModel};
use crate::nn::Ctx;

/// One masked sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmBatch {
    /// Input with `MASK` substituted at masked positions.
    pub input: Vec<usize>,
    /// Original token at masked positions, `PAD` elsewhere.
    pub targets: Vec<usize>,
    pub positions: Vec<usize>,
}

/// Masks each non-special token independently with probability `rate`.
/// A sequence with at least one maskable token always gets one mask: when
/// the draw selects none, one maskable position is picked uniformly.
pub fn mask_tokens(ids: &[usize], rate: f64, seed: u64) -> MlmBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maskable: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] >= NUM_SPECIALS).collect();
    let mut positions: Vec<usize> = maskable.iter().copied().filter(|_| rng.gen_bool(rate)).collect();
    if positions.is_empty() && !maskable.is_empty() {
        positions.push(maskable[rng.gen_range(0..maskable.len())]);
    }
    let mut input = ids.to_vec();
    let mut targets = vec![PAD; ids.len()];
    for &p in &positions {
        targets[p] = ids[p];
        input[p] = MASK;
    }
    MlmBatch {
        input,
        targets,
        positions,
    }
}

/// Seed for one `(stream, example, step)` triple.
pub fn derive_seed(seed: u64, step: u64, example: u64, stream: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [step, example, stream] {
        h = (h ^ v).wrapping_mul(0x1000_0000_01b3).rotate_left(29);
    }
    h
}

fn masked(p: &Padded, rate: f64, seed: u64) -> (Padded, Vec<usize>) {
    let b = mask_tokens(&p.ids, rate, seed);
    (
        Padded {
            ids: b.input,
            mask: p.mask.clone(),
        },
        b.targets,
    )
}

/// Masked-prediction loss of one patch. The encoder sees all three streams
/// masked; the decoder reads `BOS + cbp` (original tokens, shifted right)
/// and is scored only where the cbp input was masked.
pub fn mlm_loss<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    model: &PatchModel<T>,
    x: &EncodedPatch,
    flags: AblationFlags,
    rate: f64,
    seed: u64,
) -> Result<Var<'t, T>> {
    let (cc_p, _) = masked(&x.cc_p, rate, seed ^ 1);
    let (cc_m, _) = masked(&x.cc_m, rate, seed ^ 2);
    let (cbp, targets) = masked(&x.cbp, rate, seed ^ 3);
    let input = EncodedPatch {
        cc_p,
        cc_m,
        cbp,
        graphs: x.graphs.clone(),
    };
    let emb = model.encode(cx, &input, flags)?;
    let len = x.cbp.len();
    let mut dec = vec![BOS];
    dec.extend_from_slice(&x.cbp.ids[..len - 1]);
    let mut dec_mask = vec![true];
    dec_mask.extend_from_slice(&x.cbp.mask[..len - 1]);
    let logits = model.decoder_logits(cx, emb.memory, &emb.memory_mask, &dec, &dec_mask)?;
    logits.cross_entropy(&targets, PAD)
}

/// Forward, backward and one Adam update. `loss` builds the batch loss on
/// the given context; the returned value is that loss before the update.
pub fn train_step<T, F>(model: &mut PatchModel<T>, adam: &mut Adam<T>, train: bool, seed: u64, loss: F) -> Result<f64>
where
    T: Scalar,
    F: for<'t, 's> FnOnce(&Ctx<'t, 's, T>, &PatchModel<T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let (value, grads) = {
        let cx = Ctx::new(&tape, &model.store, train, model.cfg.dropout, seed);
        let l = loss(&cx, model)?;
        (l.item().to_f64_lossy(), tape.backward(l)?)
    };
    model.store.zero_grad();
    grads.accumulate_into(&mut model.store);
    adam.step(&mut model.store);
    Ok(value)
}

/// Mean of per-example losses.
pub fn batch_mean<'t, T: Scalar>(losses: Vec<Var<'t, T>>) -> Result<Var<'t, T>> {
    let n = losses.len();
    let mut it = losses.into_iter();
    let mut acc = it.next().expect("nonempty batch");
    for l in it {
        acc = acc.add(&l)?;
    }
    Ok(acc.scale(T::one() / T::from_usize(n).unwrap()))
}

/// Pre-training loss of a batch at `step`; masks depend only on
/// `(seed, step, example index)`.
pub fn pretrain_loss<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    model: &PatchModel<T>,
    batch: &[(usize, &EncodedPatch)],
    flags: AblationFlags,
    rate: f64,
    seed: u64,
    step: u64,
) -> Result<Var<'t, T>> {
    let losses = batch
        .iter()
        .map(|(i, x)| mlm_loss(cx, model, x, flags, rate, derive_seed(seed, step, *i as u64, 0)))
        .collect::<Result<Vec<_>>>()?;
    batch_mean(losses)
}

/// One pre-training update on `batch`.
pub fn pretrain_step<T: Scalar>(
    model: &mut PatchModel<T>,
    adam: &mut Adam<T>,
    batch: &[(usize, &EncodedPatch)],
    flags: AblationFlags,
    rate: f64,
    seed: u64,
    step: u64,
) -> Result<f64> {
    train_step(model, adam, true, derive_seed(seed, step, u64::MAX, 1), |cx, m| {
        pretrain_loss(cx, m, batch, flags, rate, seed, step)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Pre-training loop over `data` for `steps` updates with fixed-order
/// batches. Every random choice derives from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn run_pretraining<T: Scalar>(
    model: &mut PatchModel<T>,
    data: &[EncodedPatch],
    steps: usize,
    batch_size: usize,
    lr: f64,
    rate: f64,
    flags: AblationFlags,
    seed: u64,
) -> Result<Vec<StepLog>> {
    let mut adam = Adam::new(lr);
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch: Vec<(usize, &EncodedPatch)> = batch_indices(data.len(), batch_size, step)
            .into_iter()
            .map(|i| (i, &data[i]))
            .collect();
        let loss = pretrain_step(model, &mut adam, &batch, flags, rate, seed, step as u64)?;
        log::debug!("pretrain step {step} loss {loss:.6}");
        log.push(StepLog { step, loss, lr });
    }
    Ok(log)
}

/// Mean masked-prediction loss over all of `data` in evaluation mode,
/// averaged over `draws` mask draws. Draw `k` uses the masks of step
/// `u64::MAX - k`, which training never reaches.
pub fn mlm_eval_loss<T: Scalar>(
    model: &PatchModel<T>,
    data: &[EncodedPatch],
    flags: AblationFlags,
    rate: f64,
    seed: u64,
    draws: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..draws {
        for (i, x) in data.iter().enumerate() {
            let tape = Tape::new();
            let cx = Ctx::eval(&tape, &model.store);
            let l = mlm_loss(&cx, model, x, flags, rate, derive_seed(seed, u64::MAX - k, i as u64, 0))?;
            total += l.item().to_f64_lossy();
        }
    }
    Ok(total / (draws as f64 * data.len().max(1) as f64))
}

/// Contiguous batches of example indices for `step`, cycling through the
/// data in order.
pub fn batch_indices(n: usize, batch_size: usize, step: usize) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size).max(1);
    let b = step % per_epoch;
    (b * batch_size..((b + 1) * batch_size).min(n)).collect()
}

/// Next-token log-probabilities given a prefix that starts with `BOS`.
pub trait StepModel {
    fn vocab_size(&self) -> usize;
    fn log_probs(&self, prefix: &[usize]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Starts with `BOS`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl Hypothesis {
    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    /// Tokens without `BOS` and the closing `EOS`.
    pub fn output(&self) -> Vec<usize> {
        let end = if self.finished() { self.tokens.len() - 1 } else { self.tokens.len() };
        self.tokens[1..end].to_vec()
    }
}

/// Higher score first; equal scores prefer the lexicographically lower
/// token sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Stepwise argmax until `EOS` or `max_out` tokens.
pub fn greedy_decode<M: StepModel + ?Sized>(m: &M, max_out: usize) -> Hypothesis {
    let mut h = Hypothesis {
        tokens: vec![BOS],
        log_prob: 0.0,
    };
    for _ in 0..max_out {
        let lp = m.log_probs(&h.tokens);
        let t = argmax(&lp);
        h.tokens.push(t);
        h.log_prob += lp[t];
        if t == EOS {
            break;
        }
    }
    h
}

/// Beam search over summed log-probability. Finished hypotheses stay in the
/// pool and compete with extensions; the search stops when the whole beam
/// is finished or `max_out` tokens were produced. `beam == 1` is exactly
/// [`greedy_decode`].
pub fn beam_decode<M: StepModel + ?Sized>(m: &M, beam: usize, max_out: usize) -> Hypothesis {
    assert!(beam >= 1, "beam must be at least 1");
    if beam == 1 {
        return greedy_decode(m, max_out);
    }
    let mut pool = vec![Hypothesis {
        tokens: vec![BOS],
        log_prob: 0.0,
    }];
    for _ in 0..max_out {
        if pool.iter().all(Hypothesis::finished) {
            break;
        }
        let mut next = Vec::new();
        for h in pool {
            if h.finished() {
                next.push(h);
                continue;
            }
            let lp = m.log_probs(&h.tokens);
            for (t, l) in lp.iter().enumerate() {
                if !l.is_finite() {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                next.push(Hypothesis {
                    tokens,
                    log_prob: h.log_prob + l,
                });
            }
        }
        next.sort_by(rank);
        next.truncate(beam);
        pool = next;
    }
    pool.sort_by(rank);
    pool.into_iter().next().expect("beam is never empty")
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let lse = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
    row.iter().map(|v| v - lse).collect()
}

/// A trained model conditioned on a fixed patch embedding.
pub struct ModelStep<'a, T: Scalar> {
    pub model: &'a PatchModel<T>,
    pub memory: &'a OwnedEmbedding<T>,
}

impl<T: Scalar> StepModel for ModelStep<'_, T> {
    fn vocab_size(&self) -> usize {
        self.model.vocab_size
    }

    fn log_probs(&self, prefix: &[usize]) -> Vec<f64> {
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &self.model.store);
        let memory = tape.constant(&self.memory.memory);
        let mask = vec![true; prefix.len()];
        let logits = self
            .model
            .decoder_logits(&cx, memory, &self.memory.memory_mask, prefix, &mask)
            .expect("decoder shapes are fixed by the model");
        let v = self.model.vocab_size;
        let all = logits.to_vec();
        let last: Vec<f64> = all[(prefix.len() - 1) * v..].iter().map(|x| x.to_f64_lossy()).collect();
        log_softmax(&last)
    }
}

/// Decodes a patch embedding into token ids (no `BOS` / `EOS`).
pub fn decode<T: Scalar>(model: &PatchModel<T>, emb: &OwnedEmbedding<T>, beam: usize, max_out: usize) -> Vec<usize> {
    let step = ModelStep { model, memory: emb };
    beam_decode(&step, beam, max_out.min(model.max_decode_len())).output()
}

/// Detached `[L × d]` memory from raw parts; used by tests and tools.
pub fn owned_embedding<T: Scalar>(memory: Tensor<T>, mask: Vec<bool>) -> OwnedEmbedding<T> {
    let (rows, cols) = memory.dims2();
    let mut pooled = vec![T::zero(); cols];
    let n = mask.iter().filter(|m| **m).count();
    for r in (0..rows).filter(|r| mask[*r]) {
        for (p, v) in pooled.iter_mut().zip(memory.row(r)) {
            *p += *v;
        }
    }
    if n > 0 {
        for p in &mut pooled {
            *p = *p / T::from_usize(n).unwrap();
        }
    }
    OwnedEmbedding {
        pooled,
        memory,
        memory_mask: mask,
    }
}
