//! BLEU, ROUGE-L, exact-match METEOR and per-class recall.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("{left} predictions but {right} references")]
    LengthMismatch { left: usize, right: usize },
}

/// Lowercased whitespace tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the candidate's n-gram total.
pub fn modified_precision<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matches = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    (matches, cand.len().saturating_sub(n - 1))
}

/// Sentence BLEU: geometric mean of modified precisions for `n = 1..=max_n`
/// times the brevity penalty. A zero match count for `n ≥ 2` is smoothed to
/// `1 / (total + 1)`; unigram precision is never smoothed, so a candidate
/// sharing no word with the reference scores 0.
pub fn bleu<S: AsRef<str>>(cand: &[S], reference: &[S], max_n: usize) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if cand.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = modified_precision(cand, reference, n);
        let p = if m == 0 && n >= 2 {
            1.0 / (t as f64 + 1.0)
        } else if t == 0 {
            0.0
        } else {
            m as f64 / t as f64
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(bp * (log_sum / max_n as f64).exp())
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    for x in a {
        let mut cur = vec![0; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l<S: AsRef<str>>(cand: &[S], reference: &[S]) -> f64 {
    let l = lcs_len(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Exact-match unigram alignment: maximal number of matches, then fewest
/// chunks. Returns `(matches, chunks)`.
pub fn meteor_alignment<S: AsRef<str>>(cand: &[S], reference: &[S]) -> (usize, usize) {
    let mut rc: HashMap<&str, usize> = HashMap::new();
    for r in reference {
        *rc.entry(r.as_ref()).or_insert(0) += 1;
    }
    let mut cc: HashMap<&str, usize> = HashMap::new();
    for c in cand {
        *cc.entry(c.as_ref()).or_insert(0) += 1;
    }
    let matches: usize = cc.iter().map(|(w, k)| (*k).min(rc.get(w).copied().unwrap_or(0))).sum();
    if matches == 0 {
        return (0, 0);
    }
    let options: Vec<Vec<usize>> = cand
        .iter()
        .map(|c| (0..reference.len()).filter(|&j| reference[j].as_ref() == c.as_ref()).collect())
        .collect();
    let mut s = ChunkSearch {
        options: &options,
        words: cand.iter().map(AsRef::as_ref).collect(),
        target: matches,
        used: vec![false; reference.len()],
        left: cc.clone(),
        budget: 200_000,
        best: usize::MAX,
    };
    let mut quota: HashMap<&str, usize> = HashMap::new();
    for (w, k) in &cc {
        quota.insert(w, (*k).min(rc.get(w).copied().unwrap_or(0)));
    }
    s.go(0, 0, 0, None, &mut quota);
    if s.best == usize::MAX {
        s.best = greedy_chunks(&options, reference.len());
    }
    (matches, s.best)
}

fn greedy_chunks(options: &[Vec<usize>], n_ref: usize) -> usize {
    let mut used = vec![false; n_ref];
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for opts in options {
        let pick = prev
            .map(|p| p + 1)
            .filter(|q| opts.contains(q) && !used[*q])
            .or_else(|| opts.iter().copied().find(|&j| !used[j]));
        match pick {
            Some(j) => {
                if prev.is_none_or(|p| p + 1 != j) {
                    chunks += 1;
                }
                used[j] = true;
                prev = Some(j);
            }
            None => prev = None,
        }
    }
    chunks
}

struct ChunkSearch<'a> {
    options: &'a [Vec<usize>],
    words: Vec<&'a str>,
    target: usize,
    used: Vec<bool>,
    left: HashMap<&'a str, usize>,
    budget: usize,
    best: usize,
}

impl<'a> ChunkSearch<'a> {
    /// `quota[w]`: matches of word `w` still required.
    fn go(&mut self, i: usize, count: usize, chunks: usize, prev: Option<usize>, quota: &mut HashMap<&'a str, usize>) {
        if chunks >= self.best || self.budget == 0 {
            return;
        }
        self.budget -= 1;
        if i == self.options.len() {
            if count == self.target {
                self.best = chunks;
            }
            return;
        }
        let w = self.words[i];
        *self.left.get_mut(w).unwrap() -= 1;
        let need = quota[w];
        if need > 0 {
            // Prefer extending the current chunk.
            let mut order: Vec<usize> = self.options[i].iter().copied().filter(|&j| !self.used[j]).collect();
            if let Some(p) = prev {
                order.sort_by_key(|&j| j != p + 1);
            }
            for j in order {
                let extra = usize::from(prev.is_none_or(|p| p + 1 != j));
                self.used[j] = true;
                *quota.get_mut(w).unwrap() -= 1;
                self.go(i + 1, count + 1, chunks + extra, Some(j), quota);
                *quota.get_mut(w).unwrap() += 1;
                self.used[j] = false;
            }
        }
        // Skipping is allowed only if the remaining copies can cover the quota.
        if self.left[w] >= need {
            self.go(i + 1, count, chunks, None, quota);
        }
        *self.left.get_mut(w).unwrap() += 1;
    }
}

/// `F_mean · (1 − 0.5 · (chunks / matches)^3)` with
/// `F_mean = 10PR / (R + 9P)`.
pub fn meteor<S: AsRef<str>>(cand: &[S], reference: &[S]) -> f64 {
    let (m, chunks) = meteor_alignment(cand, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// `(+Recall, −Recall)`; a prediction `≥ threshold` means "correct". A
/// class with no samples gives `None`.
pub fn plus_minus_recall(predictions: &[f64], labels: &[u8], threshold: f64) -> Result<(Option<f64>, Option<f64>), MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (p, &y) in predictions.iter().zip(labels) {
        let hit = *p >= threshold;
        if y == 1 {
            pos += 1;
            tp += usize::from(hit);
        } else {
            neg += 1;
            tn += usize::from(!hit);
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok((ratio(tp, pos), ratio(tn, neg)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub bleu: Option<f64>,
    pub rouge_l: Option<f64>,
    pub meteor: Option<f64>,
    pub plus_recall: Option<f64>,
    pub minus_recall: Option<f64>,
    pub n: usize,
}

/// Mean sentence scores over aligned prediction / reference texts.
pub fn text_scores(predictions: &[String], references: &[String]) -> Result<EvalReport, MetricError> {
    if predictions.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            left: predictions.len(),
            right: references.len(),
        });
    }
    let n = predictions.len();
    if n == 0 {
        return Ok(EvalReport::default());
    }
    let (mut b, mut r, mut m) = (0.0, 0.0, 0.0);
    for (p, q) in predictions.iter().zip(references) {
        let (c, rf) = (tokenize(p), tokenize(q));
        b += bleu(&c, &rf, 4)?;
        r += rouge_l(&c, &rf);
        m += meteor(&c, &rf);
    }
    let k = n as f64;
    Ok(EvalReport {
        bleu: Some(b / k),
        rouge_l: Some(r / k),
        meteor: Some(m / k),
        n,
        ..EvalReport::default()
    })
}
