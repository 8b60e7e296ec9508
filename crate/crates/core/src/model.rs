//! The full encoder-decoder: parameters, patch featurization and the
//! forward passes shared by pre-training and the task heads.

use std::collections::HashSet;
use std::rc::Rc;

use patchrep_tensor::{ParamId, ParamStore, Result, Scalar, Tape, Tensor, Var};

use crate::bpe::{pad_to, Padded, Vocab, BOS, EOS, PAD, UNK};
use crate::config::ModelConfig;
use crate::fusion::{aggregate_with_flags, AblationFlags, PatchEmbedding};
use crate::graph::{
    align_graph, gcn_forward, graph_cross_resnet, graph_pool, laplacian_sparse, pool_mask, prune_or_keep,
    GcnConfig, StaticGraph,
};
use crate::ingest::PreprocessedPatch;
use crate::minilang::{word_tokens, AstGraph};
use crate::nn::{attention_bias, decoder_block, CrossBlock, Ctx, EncoderLayer, Init, LayerNorm, Linear};
use crate::seq_intention::{embed_streams, seq_intention, transformer_embed, SeqParams};

/// Parameter handles; values live in [`PatchModel::store`].
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub seq: SeqParams,
    pub gcn_w: Vec<ParamId>,
    pub graph_fc: Linear,
    pub cross: Vec<CrossBlock>,
    /// Normalizes the fused memory before the decoder attends to it.
    pub mem_ln: LayerNorm,
    pub out_bias: ParamId,
    pub cls: Linear,
}

#[derive(Debug, Clone)]
pub struct PatchModel<T: Scalar> {
    pub cfg: ModelConfig,
    pub gcn: GcnConfig,
    pub vocab_size: usize,
    pub params: ModelParams,
    pub store: ParamStore<T>,
}

impl<T: Scalar> PatchModel<T> {
    /// Xavier-initialized model; the same seed gives the same weights.
    pub fn new(cfg: &ModelConfig, gcn: &GcnConfig, vocab_size: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let d = cfg.d_e;
        let params = {
            let mut init = Init::new(&mut store, seed);
            let tok_emb = init.xavier("tok_emb", &[vocab_size, d]);
            let pos_emb = init.xavier("pos_emb", &[cfg.l_max, d]);
            let layers = (0..cfg.n_layers)
                .map(|i| EncoderLayer::new(&mut init, &format!("enc.{i}"), d, cfg.n_heads))
                .collect();
            let op_ln = LayerNorm::new(&mut init, "seq.op_ln", d);
            let ctx_ln = LayerNorm::new(&mut init, "seq.ctx_ln", d);
            let gcn_w = (0..gcn.layers).map(|l| init.xavier(&format!("gcn.w{l}"), &[d, d])).collect();
            let graph_fc = Linear::new(&mut init, "graph.fc", d, d, true);
            let cross = (0..cfg.n_layers)
                .map(|i| CrossBlock::new(&mut init, &format!("dec.{i}.cross"), d, cfg.n_heads))
                .collect();
            let mem_ln = LayerNorm::new(&mut init, "dec.mem_ln", d);
            let out_bias = init.zeros("dec.out_bias", &[1, vocab_size]);
            let cls = Linear::new(&mut init, "cls", d + cfg.d_b, 1, true);
            ModelParams {
                seq: SeqParams {
                    tok_emb,
                    pos_emb,
                    layers,
                    op_ln,
                    ctx_ln,
                },
                gcn_w,
                graph_fc,
                cross,
                mem_ln,
                out_bias,
                cls,
            }
        };
        PatchModel {
            cfg: cfg.clone(),
            gcn: gcn.clone(),
            vocab_size,
            params,
            store,
        }
    }

    /// Parameters on the cross-attention and graph paths.
    pub fn intention_params(&self) -> Vec<ParamId> {
        let p = &self.params;
        let mut ids = vec![p.seq.op_ln.gamma, p.seq.op_ln.beta, p.seq.ctx_ln.gamma, p.seq.ctx_ln.beta];
        ids.extend(&p.gcn_w);
        ids.push(p.graph_fc.w);
        ids.extend(p.graph_fc.b);
        ids
    }

    /// Longest decoder output that still fits the position table.
    pub fn max_decode_len(&self) -> usize {
        self.cfg.l_max - 1
    }

    /// `E_Patcherizer` for one patch.
    pub fn encode<'t>(&self, cx: &Ctx<'t, '_, T>, x: &EncodedPatch, flags: AblationFlags) -> Result<PatchEmbedding<'t, T>> {
        let p = &self.params;
        let streams = embed_streams(cx, &p.seq, &x.cc_p, &x.cc_m, &x.cbp)?;
        let intention = if flags.use_seq_intention {
            Some(seq_intention(cx, &p.seq, &streams)?)
        } else {
            None
        };
        let graph = match (&x.graphs, flags.use_graph_intention) {
            (Some([before, after]), true) => Some(self.graph_intention(cx, before, after)?),
            _ => None,
        };
        aggregate_with_flags(&streams, intention.as_ref(), graph, flags)
    }

    /// GCN over each aligned graph, pooling, then graph-cross-resnet.
    pub fn graph_intention<'t>(&self, cx: &Ctx<'t, '_, T>, before: &GraphInput, after: &GraphInput) -> Result<Var<'t, T>> {
        let w_cbp = self.graph_vector(cx, before)?;
        let w_cap = self.graph_vector(cx, after)?;
        graph_cross_resnet(cx, &self.params.graph_fc, w_cbp, w_cap)
    }

    /// Pooled GCN output `w_G` of one aligned graph; zero for an empty one.
    pub fn graph_vector<'t>(&self, cx: &Ctx<'t, '_, T>, g: &GraphInput) -> Result<Var<'t, T>> {
        if g.bags.is_empty() {
            return Ok(cx.zeros(1, self.cfg.d_e));
        }
        let h0 = cx.tape.embedding_mean(cx.p(self.params.seq.tok_emb), &g.bags)?;
        let h = gcn_forward(cx, h0, g.laplacian(), None, self.gcn.alpha, &self.gcn.betas, &self.params.gcn_w)?;
        graph_pool(h, &g.pool)
    }

    /// Bug-report vector: masked mean of the sequence encoder output.
    pub fn embed_text<'t>(&self, cx: &Ctx<'t, '_, T>, x: &Padded) -> Result<Var<'t, T>> {
        let e = transformer_embed(cx, &self.params.seq, x)?;
        e.masked_mean(&x.mask_f())
    }

    /// Next-token logits `[n × |V|]` for decoder input `ids`, attending to
    /// `memory`. Self-attention and feed-forward weights are the encoder's;
    /// the output projection is the transposed token table plus a bias.
    pub fn decoder_logits<'t>(
        &self,
        cx: &Ctx<'t, '_, T>,
        memory: Var<'t, T>,
        memory_mask: &[bool],
        ids: &[usize],
        ids_mask: &[bool],
    ) -> Result<Var<'t, T>> {
        let p = &self.params;
        let mut x = cx.drop(crate::seq_intention::init_embed(cx, &p.seq, ids)?);
        let self_bias = attention_bias::<T>(ids.len(), ids_mask, true);
        let mem_bias = attention_bias::<T>(ids.len(), memory_mask, false);
        let memory = p.mem_ln.forward(cx, memory)?;
        for (shared, cross) in p.seq.layers.iter().zip(&p.cross) {
            x = decoder_block(cx, shared, cross, x, &self_bias, memory, &mem_bias)?;
        }
        x.matmul_nt(&cx.p(p.seq.tok_emb))?.add_row(&cx.p(p.out_bias))
    }

    /// `ŷ = sigmoid(FC(E_patch ⊕ E_bugReport))` as a `[1 × 1]` value.
    pub fn classifier<'t>(&self, cx: &Ctx<'t, '_, T>, pooled: Var<'t, T>, bug: Var<'t, T>) -> Result<Var<'t, T>> {
        let cat = cx.tape.concat_cols(&[pooled, bug])?;
        Ok(self.params.cls.forward(cx, cat)?.sigmoid())
    }

    /// Detached patch embedding in evaluation mode.
    pub fn embed(&self, x: &EncodedPatch, flags: AblationFlags) -> Result<crate::fusion::OwnedEmbedding<T>> {
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &self.store);
        Ok(self.encode(&cx, x, flags)?.to_owned())
    }
}

/// Teacher-forced decoder input `BOS + seq` and target `seq + EOS`, both of
/// length `len`.
pub fn teacher_forcing(seq: &[usize], len: usize) -> (Padded, Vec<usize>) {
    let body = &seq[..seq.len().min(len - 1)];
    let mut input = vec![BOS];
    input.extend_from_slice(body);
    let mut target = body.to_vec();
    target.push(EOS);
    target.resize(len, PAD);
    (pad_to(input, len), target)
}

/// One side of the graph input in compact form: occupied slots renumbered
/// in slot order. Isolated zero PAD slots contribute nothing to message
/// passing or pooling, so the compact form is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    /// BPE ids of each node label; the node feature is their mean embedding.
    pub bags: Vec<Vec<usize>>,
    pub edges: Vec<(usize, usize)>,
    pub pool: Vec<bool>,
}

impl GraphInput {
    pub fn laplacian<T: Scalar>(&self) -> Rc<patchrep_tensor::SparseMatrix<T>> {
        Rc::new(laplacian_sparse(self.bags.len(), &self.edges))
    }
}

/// Model-ready patch: three padded streams and, when both sides parsed,
/// the aligned graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPatch {
    pub cc_p: Padded,
    pub cc_m: Padded,
    pub cbp: Padded,
    pub graphs: Option<[GraphInput; 2]>,
}

/// Tokens appearing on changed lines.
pub fn changed_tokens(p: &PreprocessedPatch) -> HashSet<String> {
    p.plus_lines
        .iter()
        .chain(&p.minus_lines)
        .flat_map(|l| word_tokens(&l.text))
        .collect()
}

/// Turns preprocessed patches into model inputs.
#[derive(Debug, Clone)]
pub struct Featurizer<'a> {
    pub vocab: &'a Vocab,
    pub static_graph: Option<&'a StaticGraph>,
    pub l_max: usize,
    pub gcn: &'a GcnConfig,
}

impl Featurizer<'_> {
    pub fn text(&self, s: &str) -> Padded {
        self.vocab.encode(s, self.l_max)
    }

    fn graph_input(&self, g: &AstGraph, changed: &HashSet<String>) -> GraphInput {
        let local = prune_or_keep(g, changed);
        let (labels, edges): (Vec<String>, Vec<(usize, usize)>) = match self.static_graph {
            Some(s) => {
                let al = align_graph(&local, s, self.gcn.edges);
                let (labels, edges) = al.compact();
                (labels.into_iter().map(str::to_string).collect(), edges)
            }
            None => (
                local.nodes.iter().map(|n| n.label.clone()).collect(),
                local.edges.iter().copied().collect(),
            ),
        };
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let pool = pool_mask(&refs, self.gcn.pooling, changed);
        let bags = labels
            .iter()
            .map(|l| {
                let ids = self.vocab.encode_ids(l);
                if ids.is_empty() {
                    vec![UNK]
                } else {
                    ids
                }
            })
            .collect();
        GraphInput { bags, edges, pool }
    }

    pub fn featurize(&self, p: &PreprocessedPatch) -> EncodedPatch {
        let changed = changed_tokens(p);
        let graphs = p
            .has_graphs()
            .then(|| [self.graph_input(&p.before_graph, &changed), self.graph_input(&p.after_graph, &changed)]);
        EncodedPatch {
            cc_p: self.text(&p.plus_text()),
            cc_m: self.text(&p.minus_text()),
            cbp: self.text(&p.before),
            graphs,
        }
    }
}

/// `[1 × d]` constant from a precomputed vector.
pub fn constant_row<'t, T: Scalar>(tape: &'t Tape<T>, v: &[f64]) -> Var<'t, T> {
    tape.constant(&Tensor::from_vec(&[1, v.len()], v.iter().map(|x| T::from_f64_lossy(*x)).collect()).expect("row"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::train_bpe;
    use crate::graph::{build_static_graph, renormalized_laplacian, AlignedGraph};
    use crate::ingest::preprocess_patch;
    use crate::minilang::MiniLangParser;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d_e: 8,
            n_heads: 2,
            n_layers: 1,
            dropout: 0.0,
            l_max: 16,
            n_g: 64,
            d_b: 8,
        }
    }

    const DIFF: &str = "@@ -1,3 +1,3 @@\n class A {\n-int f(){ return x + 1; }\n+int f(){ return x * 2; }\n }\n";

    fn setup() -> (Vocab, PreprocessedPatch) {
        let p = preprocess_patch(DIFF, None, &MiniLangParser).unwrap();
        let vocab = train_bpe(&[p.before.clone(), p.after.clone()], 40).unwrap();
        (vocab, p)
    }

    #[test]
    fn teacher_forcing_shapes() {
        let (inp, tgt) = teacher_forcing(&[7, 8, 9], 6);
        assert_eq!(inp.ids, vec![BOS, 7, 8, 9, PAD, PAD]);
        assert_eq!(tgt, vec![7, 8, 9, EOS, PAD, PAD]);
        let (inp, tgt) = teacher_forcing(&[7, 8, 9], 3);
        assert_eq!(inp.ids, vec![BOS, 7, 8]);
        assert_eq!(tgt, vec![7, 8, EOS]);
    }

    #[test]
    fn featurize_and_encode() {
        let (vocab, p) = setup();
        let gcn = GcnConfig::default();
        let s = build_static_graph(&[p.before_graph.clone(), p.after_graph.clone()], 64);
        let f = Featurizer {
            vocab: &vocab,
            static_graph: Some(&s),
            l_max: 16,
            gcn: &gcn,
        };
        let x = f.featurize(&p);
        let [b, a] = x.graphs.as_ref().unwrap();
        assert!(!b.bags.is_empty() && !a.bags.is_empty());
        let model = PatchModel::<f64>::new(&small_cfg(), &gcn, vocab.len(), 1);
        let e = model.embed(&x, AblationFlags::FULL).unwrap();
        assert_eq!(e.pooled.len(), 8);
        assert!(e.pooled.iter().all(|v| v.is_finite()));
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &model.store);
        let emb = model.encode(&cx, &x, AblationFlags::FULL).unwrap();
        let (inp, _) = teacher_forcing(&[5, 6], 16);
        let logits = model.decoder_logits(&cx, emb.memory, &emb.memory_mask, &inp.ids, &inp.mask).unwrap();
        assert_eq!(logits.dims(), (16, vocab.len()));
    }

    /// The compact GCN equals the dense `N_g`-slot computation on real rows.
    #[test]
    fn compact_gcn_matches_dense_slots() {
        let (vocab, p) = setup();
        let gcn = GcnConfig::default();
        let s = build_static_graph(std::slice::from_ref(&p.before_graph), 40);
        let model = PatchModel::<f64>::new(&small_cfg(), &gcn, vocab.len(), 3);
        let al: AlignedGraph = align_graph(&p.after_graph, &s, gcn.edges);
        let (labels, edges) = al.compact();
        let bags: Vec<Vec<usize>> = labels.iter().map(|l| vocab.encode_ids(l)).collect();
        let g = GraphInput {
            bags: bags.clone(),
            edges,
            pool: vec![true; labels.len()],
        };
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &model.store);
        let compact = model.graph_vector(&cx, &g).unwrap().to_vec();

        // Dense reference over all n_g slots, PAD rows zero.
        let n = al.n_g;
        let d = 8;
        let table = model.store.value(model.params.seq.tok_emb);
        let mut h0 = vec![0.0; n * d];
        for ((slot, _), bag) in al.occupied.iter().zip(&bags) {
            for c in 0..d {
                h0[slot * d + c] = bag.iter().map(|&t| table.row(t)[c]).sum::<f64>() / bag.len() as f64;
            }
        }
        let pm = renormalized_laplacian(n, &al.dense_adjacency()).unwrap();
        let mask = al.node_mask();
        let mut h = h0.clone();
        for (l, &beta) in gcn.betas.iter().enumerate() {
            let w = model.store.value(model.params.gcn_w[l]).data();
            let mut m = vec![0.0; n * d];
            for i in 0..n {
                for c in 0..d {
                    let ph: f64 = (0..n).map(|j| pm[i * n + j] * h[j * d + c]).sum();
                    m[i * d + c] = (1.0 - gcn.alpha) * ph + gcn.alpha * h0[i * d + c];
                }
            }
            let mut next = vec![0.0; n * d];
            for i in 0..n {
                for c in 0..d {
                    let mw: f64 = (0..d).map(|j| m[i * d + j] * w[j * d + c]).sum();
                    let v = (1.0 - beta) * m[i * d + c] + beta * mw;
                    next[i * d + c] = if mask[i] { v.max(0.0) } else { 0.0 };
                }
            }
            h = next;
        }
        let real = mask.iter().filter(|m| **m).count() as f64;
        for c in 0..d {
            let want: f64 = (0..n).map(|i| h[i * d + c]).sum::<f64>() / real;
            assert!((compact[c] - want).abs() < 1e-12, "{c}: {} vs {want}", compact[c]);
        }
    }
}
