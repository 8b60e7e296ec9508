//! Sequence intention: transformer embeddings of the added, removed and
//! before-patch streams, operation-wise cross-attention with a residual
//! block, and the context-wise combination with the before-patch code.

use patchrep_tensor::{ParamId, Result, Scalar, Var};

use crate::bpe::Padded;
use crate::nn::{attention_bias, bool_mask, Ctx, EncoderLayer, LayerNorm};

/// Parameters of the sequence side. The token table doubles as the node
/// feature table of the graph side and as the tied output projection.
#[derive(Debug, Clone)]
pub struct SeqParams {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<EncoderLayer>,
    /// Normalization inside the operation-wise residual block.
    pub op_ln: LayerNorm,
    /// Normalization inside the context-wise residual block.
    pub ctx_ln: LayerNorm,
}

/// Token plus position embedding for the first `ids.len()` positions.
pub fn init_embed<'t, T: Scalar>(cx: &Ctx<'t, '_, T>, p: &SeqParams, ids: &[usize]) -> Result<Var<'t, T>> {
    let tok = cx.tape.embedding(cx.p(p.tok_emb), ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let pos = cx.tape.embedding(cx.p(p.pos_emb), &positions)?;
    tok.add(&pos)
}

/// `E_X = Transformer(Init(X))` with padded rows excluded from attention and
/// zeroed in the output.
pub fn transformer_embed<'t, T: Scalar>(cx: &Ctx<'t, '_, T>, p: &SeqParams, x: &Padded) -> Result<Var<'t, T>> {
    let mut h = cx.drop(init_embed(cx, p, &x.ids)?);
    let bias = attention_bias::<T>(x.len(), &x.mask, false);
    for layer in &p.layers {
        h = layer.forward(cx, h, &bias)?;
    }
    h.mask_rows(&bool_mask(&x.mask))
}

/// Raw dot-product attention weights `α_i = softmax_n(E_src[n] · e_i)` over
/// unmasked source rows.
pub fn cross_attention_weights<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    e_src: Var<'t, T>,
    e_qry: Var<'t, T>,
    src_mask: &[bool],
) -> Result<Var<'t, T>> {
    let bias = attention_bias::<T>(e_qry.dims().0, src_mask, false);
    Ok(e_qry.matmul_nt(&e_src)?.add(&cx.tape.constant(&bias))?.softmax())
}

/// `v_i = Σ_n α_{i,n} h_n`. A fully masked source gives `v = 0`.
pub fn cross_attention<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    e_src: Var<'t, T>,
    e_qry: Var<'t, T>,
    src_mask: &[bool],
) -> Result<Var<'t, T>> {
    if !src_mask.iter().any(|m| *m) {
        let (r, c) = e_qry.dims();
        return Ok(cx.zeros(r, c));
    }
    cross_attention_weights(cx, e_src, e_qry, src_mask)?.matmul(&e_src)
}

/// `relu(h(E) + (E + v))`.
pub fn cross_resnet<'t, T: Scalar>(cx: &Ctx<'t, '_, T>, ln: &LayerNorm, e: Var<'t, T>, v: Var<'t, T>) -> Result<Var<'t, T>> {
    let skip = e.add(&v)?;
    Ok(ln.forward(cx, e)?.add(&skip)?.relu())
}

pub fn or_mask(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| *x || *y).collect()
}

/// Raw stream embeddings, shared by the full encoder and the ablations.
pub struct Streams<'t, T: Scalar> {
    pub e_cc_p: Var<'t, T>,
    pub e_cc_m: Var<'t, T>,
    pub e_cbp: Var<'t, T>,
    pub mask_cc_p: Vec<bool>,
    pub mask_cc_m: Vec<bool>,
    pub mask_cbp: Vec<bool>,
}

pub fn embed_streams<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    p: &SeqParams,
    cc_p: &Padded,
    cc_m: &Padded,
    cbp: &Padded,
) -> Result<Streams<'t, T>> {
    Ok(Streams {
        e_cc_p: transformer_embed(cx, p, cc_p)?,
        e_cc_m: transformer_embed(cx, p, cc_m)?,
        e_cbp: transformer_embed(cx, p, cbp)?,
        mask_cc_p: cc_p.mask.clone(),
        mask_cc_m: cc_m.mask.clone(),
        mask_cbp: cbp.mask.clone(),
    })
}

pub struct SeqIntentionOut<'t, T: Scalar> {
    pub o_cc_p: Var<'t, T>,
    pub o_cc_m: Var<'t, T>,
    pub o_ct2cc_p: Var<'t, T>,
    pub o_ct2cc_m: Var<'t, T>,
    pub mask_cc_p: Vec<bool>,
    pub mask_cc_m: Vec<bool>,
    pub mask_ct2cc_p: Vec<bool>,
    pub mask_ct2cc_m: Vec<bool>,
}

/// Operation-wise and context-wise outputs from already embedded streams.
pub fn seq_intention<'t, T: Scalar>(cx: &Ctx<'t, '_, T>, p: &SeqParams, s: &Streams<'t, T>) -> Result<SeqIntentionOut<'t, T>> {
    let v_p = cross_attention(cx, s.e_cc_m, s.e_cc_p, &s.mask_cc_m)?;
    let v_m = cross_attention(cx, s.e_cc_p, s.e_cc_m, &s.mask_cc_p)?;
    let o_cc_p = cross_resnet(cx, &p.op_ln, s.e_cc_p, v_p)?.mask_rows(&bool_mask(&s.mask_cc_p))?;
    let o_cc_m = cross_resnet(cx, &p.op_ln, s.e_cc_m, v_m)?.mask_rows(&bool_mask(&s.mask_cc_m))?;
    let mask_ct2cc_p = or_mask(&s.mask_cc_p, &s.mask_cbp);
    let mask_ct2cc_m = or_mask(&s.mask_cc_m, &s.mask_cbp);
    let o_ct2cc_p = cross_resnet(cx, &p.ctx_ln, s.e_cc_p, s.e_cbp)?.mask_rows(&bool_mask(&mask_ct2cc_p))?;
    let o_ct2cc_m = cross_resnet(cx, &p.ctx_ln, s.e_cc_m, s.e_cbp)?.mask_rows(&bool_mask(&mask_ct2cc_m))?;
    Ok(SeqIntentionOut {
        o_cc_p,
        o_cc_m,
        o_ct2cc_p,
        o_ct2cc_m,
        mask_cc_p: s.mask_cc_p.clone(),
        mask_cc_m: s.mask_cc_m.clone(),
        mask_ct2cc_p,
        mask_ct2cc_m,
    })
}

/// Embeds the three streams and runs both intention blocks.
pub fn encode_seq_intention<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    p: &SeqParams,
    cc_p: &Padded,
    cc_m: &Padded,
    cbp: &Padded,
) -> Result<SeqIntentionOut<'t, T>> {
    let s = embed_streams(cx, p, cc_p, cc_m, cbp)?;
    seq_intention(cx, p, &s)
}
