//! Byte-pair-encoding vocabulary over code-oriented pre-tokens.
//!
//! Text is split into words (runs of alphanumerics and `_`) and single
//! punctuation characters. A word that follows whitespace starts with the
//! marker symbol `▁`, so decoding restores single spaces between words.

use std::collections::{BTreeSet, HashMap};

use patchrep_tensor::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const MASK: usize = 3;
pub const UNK: usize = 4;
pub const NUM_SPECIALS: usize = 5;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<mask>", "<unk>"];

const SPACE: char = '▁';

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BpeError {
    #[error("BPE training corpus is empty")]
    CorpusEmpty,
    #[error("unknown token id {0}")]
    UnknownId(usize),
    #[error("invalid vocabulary file: {0}")]
    Invalid(String),
}

/// Splits text into pre-tokens, each a list of single-character symbols.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut space_before = false;
    let flush = |cur: &mut String, words: &mut Vec<String>| {
        if !cur.is_empty() {
            words.push(std::mem::take(cur));
        }
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut cur, &mut words);
            space_before = true;
        } else if c.is_alphanumeric() || c == '_' {
            if cur.is_empty() && space_before {
                cur.push(SPACE);
            }
            cur.push(c);
            space_before = false;
        } else {
            flush(&mut cur, &mut words);
            let mut w = String::new();
            if space_before {
                w.push(SPACE);
            }
            w.push(c);
            words.push(w);
            space_before = false;
        }
    }
    flush(&mut cur, &mut words);
    if words.first().is_some_and(|w| w.starts_with(SPACE)) {
        words[0].remove(0);
    }
    words
}

/// Token ids padded or truncated to a fixed length, with the real-position mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Padded {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Padded {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn mask_f<T: Scalar>(&self) -> Vec<T> {
        self.mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabDoc", into = "VocabDoc")]
pub struct Vocab {
    alphabet: Vec<String>,
    merges: Vec<(String, String)>,
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
    ranks: HashMap<(String, String), usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabDoc {
    specials: std::collections::BTreeMap<String, usize>,
    alphabet: Vec<String>,
    merges: Vec<[String; 2]>,
}

impl From<Vocab> for VocabDoc {
    fn from(v: Vocab) -> Self {
        VocabDoc {
            specials: SPECIAL_TOKENS.iter().enumerate().map(|(i, s)| (s.to_string(), i)).collect(),
            alphabet: v.alphabet,
            merges: v.merges.into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

impl TryFrom<VocabDoc> for Vocab {
    type Error = BpeError;

    fn try_from(doc: VocabDoc) -> Result<Self, BpeError> {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if doc.specials.get(*s) != Some(&i) {
                return Err(BpeError::Invalid(format!("special {s} must have id {i}")));
            }
        }
        let v = Vocab::from_parts(doc.alphabet, doc.merges.into_iter().map(|[a, b]| (a, b)).collect());
        if v.id_to_token.len() != v.token_to_id.len() {
            return Err(BpeError::Invalid("duplicate tokens".into()));
        }
        Ok(v)
    }
}

impl Vocab {
    fn from_parts(alphabet: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(alphabet.iter().cloned());
        id_to_token.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
        let token_to_id = id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let ranks = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Vocab {
            alphabet,
            merges,
            id_to_token,
            token_to_id,
            ranks,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    fn encode_word(&self, word: &str, out: &mut Vec<usize>) {
        let mut syms: Vec<String> = word.chars().map(|c| c.to_string()).collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|r| (*r, i)))
                .min();
            let Some((_, i)) = best else { break };
            let merged = format!("{}{}", syms[i], syms[i + 1]);
            syms[i] = merged;
            syms.remove(i + 1);
        }
        for s in syms {
            let id = self.token_to_id.get(&s).copied().filter(|&i| i >= NUM_SPECIALS);
            out.push(id.unwrap_or(UNK));
        }
    }

    /// Unbounded encoding without specials.
    pub fn encode_ids(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for w in pre_tokenize(text) {
            self.encode_word(&w, &mut out);
        }
        out
    }

    /// Encodes to exactly `max_len` ids: truncated, then right-padded with PAD.
    pub fn encode(&self, text: &str, max_len: usize) -> Padded {
        pad_to(self.encode_ids(text), max_len)
    }

    /// Concatenates tokens, dropping PAD, BOS and EOS.
    pub fn decode(&self, ids: &[usize]) -> Result<String, BpeError> {
        let mut s = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(BpeError::UnknownId(id))?;
            if matches!(id, PAD | BOS | EOS) {
                continue;
            }
            if id < NUM_SPECIALS && !s.is_empty() {
                s.push(' ');
            }
            s.push_str(tok);
        }
        Ok(s.replace(SPACE, " ").trim().to_string())
    }
}

pub fn pad_to(mut ids: Vec<usize>, max_len: usize) -> Padded {
    ids.truncate(max_len);
    let real = ids.len();
    ids.resize(max_len, PAD);
    Padded {
        ids,
        mask: (0..max_len).map(|i| i < real).collect(),
    }
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Learns merges from `corpus` until `target_size` non-special tokens exist
/// or no pair is left. Characters seen only in `extra_chars_from` join the
/// alphabet without contributing merges.
pub fn train_bpe_with_alphabet(corpus: &[String], extra_chars_from: &[String], target_size: usize) -> Result<Vocab, BpeError> {
    if corpus.iter().all(|s| s.trim().is_empty()) {
        return Err(BpeError::CorpusEmpty);
    }
    let mut word_freq: HashMap<String, usize> = HashMap::new();
    for line in corpus {
        for w in pre_tokenize(line) {
            *word_freq.entry(w).or_default() += 1;
        }
    }
    let mut alphabet: BTreeSet<String> = BTreeSet::new();
    for w in word_freq.keys() {
        alphabet.extend(w.chars().map(|c| c.to_string()));
    }
    for line in extra_chars_from {
        for w in pre_tokenize(line) {
            alphabet.extend(w.chars().map(|c| c.to_string()));
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .into_iter()
        .map(|(w, f)| (w.chars().map(|c| c.to_string()).collect(), f))
        .collect();
    words.sort();
    let mut merges: Vec<(String, String)> = Vec::new();
    let mut n_tokens = alphabet.len();
    let mut known: BTreeSet<String> = alphabet.clone();
    while n_tokens < target_size {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, f) in &words {
            for w in syms.windows(2) {
                *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += f;
            }
        }
        // Highest count wins; ties go to the lexicographically smallest pair.
        let Some(best) = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|((a, b), _)| (a.to_string(), b.to_string()))
        else {
            break;
        };
        let merged = format!("{}{}", best.0, best.1);
        for (syms, _) in &mut words {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == best.0 && syms[i + 1] == best.1 {
                    syms[i] = merged.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        if known.insert(merged) {
            n_tokens += 1;
        }
        merges.push(best);
    }
    Ok(Vocab::from_parts(alphabet.into_iter().collect(), merges))
}

pub fn train_bpe(corpus: &[String], target_size: usize) -> Result<Vocab, BpeError> {
    train_bpe_with_alphabet(corpus, &[], target_size)
}
