//! Layer primitives over the tape: parameter creation, linear maps, affine
//! layer norm, multi-head attention and post-norm transformer blocks.

use std::cell::RefCell;

use patchrep_tensor::{xavier_uniform, ParamId, ParamStore, Result, Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Additive attention bias standing in for `-inf` on masked keys.
pub const MASK_BIAS: f64 = -1e9;

/// Creates named parameters in a fixed order from one seeded stream.
pub struct Init<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Init {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn xavier(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let t = xavier_uniform(shape, &mut self.rng);
        self.store.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::full(shape, T::one()))
    }
}

/// Per-forward state: tape, parameters, and dropout randomness.
pub struct Ctx<'t, 's, T: Scalar> {
    pub tape: &'t Tape<T>,
    pub store: &'s ParamStore<T>,
    pub train: bool,
    pub dropout: f64,
    rng: RefCell<ChaCha8Rng>,
}

impl<'t, 's, T: Scalar> Ctx<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, train: bool, dropout: f64, seed: u64) -> Self {
        Ctx {
            tape,
            store,
            train,
            dropout,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Inference context: no dropout.
    pub fn eval(tape: &'t Tape<T>, store: &'s ParamStore<T>) -> Self {
        Self::new(tape, store, false, 0.0, 0)
    }

    pub fn p(&self, id: ParamId) -> Var<'t, T> {
        self.tape.param(self.store, id)
    }

    pub fn drop(&self, x: Var<'t, T>) -> Var<'t, T> {
        self.tape.dropout(x, self.dropout, self.train, &mut *self.rng.borrow_mut())
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var<'t, T> {
        self.tape.constant_rows(rows, cols, vec![T::zero(); rows * cols])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let w = init.xavier(&format!("{name}.w"), &[d_in, d_out]);
        let b = bias.then(|| init.zeros(&format!("{name}.b"), &[1, d_out]));
        Linear { w, b }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.matmul(&cx.p(self.w))?;
        match self.b {
            Some(b) => y.add_row(&cx.p(b)),
            None => Ok(y),
        }
    }
}

/// Row normalization followed by a learned per-feature scale and shift.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: init.ones(&format!("{name}.gamma"), &[1, d]),
            beta: init.zeros(&format!("{name}.beta"), &[1, d]),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm().mul_row(&cx.p(self.gamma))?.add_row(&cx.p(self.beta))
    }
}

/// `[q × k]` additive bias: zero where key `j` is visible to query `i`.
pub fn attention_bias<T: Scalar>(q_len: usize, key_mask: &[bool], causal: bool) -> Tensor<T> {
    let k_len = key_mask.len();
    let neg = T::from_f64_lossy(MASK_BIAS);
    let data = (0..q_len)
        .flat_map(|i| (0..k_len).map(move |j| (i, j)))
        .map(|(i, j)| if key_mask[j] && (!causal || j <= i) { T::zero() } else { neg })
        .collect();
    Tensor::from_vec(&[q_len, k_len], data).expect("bias shape")
}

#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, heads: usize) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "d_e={d} not divisible by n_heads={heads}");
        MultiHeadAttention {
            q: Linear::new(init, &format!("{name}.q"), d, d, true),
            k: Linear::new(init, &format!("{name}.k"), d, d, true),
            v: Linear::new(init, &format!("{name}.v"), d, d, true),
            o: Linear::new(init, &format!("{name}.o"), d, d, true),
            heads,
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, '_, T>,
        query: Var<'t, T>,
        memory: Var<'t, T>,
        bias: &Tensor<T>,
    ) -> Result<Var<'t, T>> {
        let q = self.q.forward(cx, query)?;
        let k = self.k.forward(cx, memory)?;
        let v = self.v.forward(cx, memory)?;
        let d = q.dims().1;
        let dh = d / self.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let bias = cx.tape.constant(bias);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.slice_cols(h * dh, dh)?;
            let kh = k.slice_cols(h * dh, dh)?;
            let vh = v.slice_cols(h * dh, dh)?;
            let att = qh.matmul_nt(&kh)?.scale(scale).add(&bias)?.softmax();
            outs.push(cx.drop(att).matmul(&vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { cx.tape.concat_cols(&outs)? };
        self.o.forward(cx, cat)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(init, &format!("{name}.up"), d, hidden, true),
            down: Linear::new(init, &format!("{name}.down"), hidden, d, true),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = cx.drop(self.up.forward(cx, x)?.relu());
        self.down.forward(cx, h)
    }
}

/// Post-norm encoder block: `x = LN(x + attn(x)); x = LN(x + ffn(x))`.
#[derive(Debug, Clone, Copy)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, heads: usize) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), d, heads),
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), d),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), d, 4 * d),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), d),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, x: Var<'t, T>, bias: &Tensor<T>) -> Result<Var<'t, T>> {
        let a = cx.drop(self.attn.forward(cx, x, x, bias)?);
        let x = self.ln1.forward(cx, x.add(&a)?)?;
        let f = cx.drop(self.ffn.forward(cx, x)?);
        self.ln2.forward(cx, x.add(&f)?)
    }
}

/// Decoder-only parts of a block; self-attention and feed-forward weights
/// come from the matching [`EncoderLayer`].
#[derive(Debug, Clone, Copy)]
pub struct CrossBlock {
    pub attn: MultiHeadAttention,
    pub ln: LayerNorm,
}

impl CrossBlock {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, heads: usize) -> Self {
        CrossBlock {
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), d, heads),
            ln: LayerNorm::new(init, &format!("{name}.ln"), d),
        }
    }
}

/// Shared-weight decoder block: causal self-attention, cross-attention over
/// `memory`, feed-forward.
pub fn decoder_block<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    shared: &EncoderLayer,
    cross: &CrossBlock,
    x: Var<'t, T>,
    self_bias: &Tensor<T>,
    memory: Var<'t, T>,
    mem_bias: &Tensor<T>,
) -> Result<Var<'t, T>> {
    let a = cx.drop(shared.attn.forward(cx, x, x, self_bias)?);
    let x = shared.ln1.forward(cx, x.add(&a)?)?;
    let c = cx.drop(cross.attn.forward(cx, x, memory, mem_bias)?);
    let x = cross.ln.forward(cx, x.add(&c)?)?;
    let f = cx.drop(shared.ffn.forward(cx, x)?);
    shared.ln2.forward(cx, x.add(&f)?)
}

pub fn bool_mask<T: Scalar>(m: &[bool]) -> Vec<T> {
    m.iter().map(|&b| if b { T::one() } else { T::zero() }).collect()
}
