//! Aggregation of the sequence streams and the graph vector into one patch
//! representation.

use patchrep_tensor::{Result, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::nn::bool_mask;
use crate::seq_intention::{SeqIntentionOut, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_seq_intention: bool,
    pub use_graph_intention: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_seq_intention: true,
            use_graph_intention: true,
        }
    }
}

impl AblationFlags {
    pub const FULL: AblationFlags = AblationFlags {
        use_seq_intention: true,
        use_graph_intention: true,
    };
    pub const NO_SEQ: AblationFlags = AblationFlags {
        use_seq_intention: false,
        use_graph_intention: true,
    };
    pub const NO_GRAPH: AblationFlags = AblationFlags {
        use_seq_intention: true,
        use_graph_intention: false,
    };
    pub const NEITHER: AblationFlags = AblationFlags {
        use_seq_intention: false,
        use_graph_intention: false,
    };

    pub fn name(&self) -> &'static str {
        match (self.use_seq_intention, self.use_graph_intention) {
            (true, true) => "full",
            (false, true) => "no-seq-intention",
            (true, false) => "no-graph-intention",
            (false, false) => "no-seq-no-graph",
        }
    }
}

/// What the sequence side contributes to the memory.
pub enum SeqPart<'a, 't, T: Scalar> {
    Intention(&'a SeqIntentionOut<'t, T>),
    Raw(&'a Streams<'t, T>),
}

/// Patch representation on the tape.
pub struct PatchEmbedding<'t, T: Scalar> {
    /// `[1 × d]` masked mean of the memory rows.
    pub pooled: Var<'t, T>,
    /// `[L_max × d]` decoder memory; PAD rows are zero.
    pub memory: Var<'t, T>,
    pub memory_mask: Vec<bool>,
}

impl<T: Scalar> PatchEmbedding<'_, T> {
    /// Detached copy for decoding and export.
    pub fn to_owned(&self) -> OwnedEmbedding<T> {
        OwnedEmbedding {
            pooled: self.pooled.to_vec(),
            memory: self.memory.value(),
            memory_mask: self.memory_mask.clone(),
        }
    }
}

/// [`PatchEmbedding`] values off the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnedEmbedding<T> {
    pub pooled: Vec<T>,
    pub memory: Tensor<T>,
    pub memory_mask: Vec<bool>,
}

/// Sum of the sequence streams with the graph vector broadcast onto every
/// unmasked row; `pooled` is the masked mean of the result.
///
/// `memory_mask` is the union of the cc_p, cc_m and cbp masks in every
/// mode so the ablations only change values, not the layout.
pub fn aggregate<'t, T: Scalar>(
    seq: SeqPart<'_, 't, T>,
    graph: Option<Var<'t, T>>,
    memory_mask: Vec<bool>,
) -> Result<PatchEmbedding<'t, T>> {
    let sum = match seq {
        SeqPart::Intention(o) => o.o_cc_p.add(&o.o_cc_m)?.add(&o.o_ct2cc_p)?.add(&o.o_ct2cc_m)?,
        SeqPart::Raw(s) => s.e_cc_p.add(&s.e_cc_m)?,
    };
    let m = bool_mask::<T>(&memory_mask);
    let memory = match graph {
        Some(g) => sum.add_row(&g)?,
        None => sum,
    }
    .mask_rows(&m)?;
    let pooled = memory.masked_mean(&m)?;
    Ok(PatchEmbedding {
        pooled,
        memory,
        memory_mask,
    })
}

/// Chooses the sequence part and graph term for `flags`.
pub fn aggregate_with_flags<'a, 't, T: Scalar>(
    streams: &'a Streams<'t, T>,
    intention: Option<&'a SeqIntentionOut<'t, T>>,
    graph: Option<Var<'t, T>>,
    flags: AblationFlags,
) -> Result<PatchEmbedding<'t, T>> {
    let mask: Vec<bool> = (0..streams.mask_cbp.len())
        .map(|i| streams.mask_cc_p[i] || streams.mask_cc_m[i] || streams.mask_cbp[i])
        .collect();
    let seq = match (flags.use_seq_intention, intention) {
        (true, Some(o)) => SeqPart::Intention(o),
        _ => SeqPart::Raw(streams),
    };
    let graph = if flags.use_graph_intention { graph } else { None };
    aggregate(seq, graph, mask)
}
