//! Reverse-mode tape.
//!
//! Every tensor on a tape is a matrix (`rows × cols`); vectors are `1 × d`
//! rows and scalars are `1 × 1`. Broadcasting is limited to a scalar
//! constant against a tensor (`scale`, `add_scalar`) and a `1 × d` row
//! against an `n × d` matrix (`add_row`, `mul_row`).

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;
use crate::tensor::{dims2, Tensor};

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Param,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    MulConst(NodeId, Rc<Vec<T>>),
    MaskRows(NodeId, Rc<Vec<T>>),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    LayerNorm { a: NodeId, xhat: Vec<T>, inv_std: Vec<T> },
    Embedding { table: NodeId, ids: Vec<usize> },
    EmbeddingMean { table: NodeId, bags: Vec<Vec<usize>> },
    SliceCols { a: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    WeightedRowSum { a: NodeId, weights: Vec<T> },
    Sum(NodeId),
    SpMM { p: Rc<SparseMatrix<T>>, h: NodeId },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, ignore: usize, probs: Vec<T>, n_valid: usize },
    BceSum { p: NodeId, targets: Vec<T> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Param => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::MulConst(a, _)
            | Op::MaskRows(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Sum(a) => vec![*a],
            Op::LayerNorm { a, .. } | Op::SliceCols { a, .. } | Op::WeightedRowSum { a, .. } => vec![*a],
            Op::Embedding { table, .. } | Op::EmbeddingMean { table, .. } => vec![*table],
            Op::ConcatCols(v) | Op::ConcatRows(v) => v.clone(),
            Op::SpMM { h, .. } => vec![*h],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::BceSum { p, .. } => vec![*p],
        }
    }
}

struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated.
///
/// A tape lives for one forward/backward pass. Parameters enter through
/// [`Tape::param`], which copies the current value once per tape.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, NodeId>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.dims();
        write!(f, "Var#{}[{r}x{c}]", self.id)
    }
}

fn mismatch(op: &'static str, l: (usize, usize), r: (usize, usize)) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: vec![l.0, l.1],
        right: vec![r.0, r.1],
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Var<'_, T> {
        debug_assert_eq!(rows * cols, value.len());
        let requires_grad = {
            let nodes = self.nodes.borrow();
            match &op {
                Op::Param => true,
                other => other.inputs().iter().any(|&i| nodes[i].requires_grad),
            }
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push_leaf(&self, t: &Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let (r, c) = t.dims2();
        let v = self.push(r, c, t.data().to_vec(), Op::Leaf);
        self.nodes.borrow_mut()[v.id].requires_grad = requires_grad;
        v
    }

    /// Input that gradients flow into.
    pub fn leaf(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push_leaf(t, true)
    }

    /// Input that gradients never flow into.
    pub fn constant(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push_leaf(t, false)
    }

    pub fn constant_rows(&self, rows: usize, cols: usize, data: Vec<T>) -> Var<'_, T> {
        self.push(rows, cols, data, Op::Leaf)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&nid) = self.params.borrow().get(&id) {
            return Var { tape: self, id: nid };
        }
        let t = store.value(id);
        let (r, c) = t.dims2();
        let v = self.push(r, c, t.data().to_vec(), Op::Param);
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes.borrow()[id];
        (n.rows, n.cols)
    }

    /// Row lookup into an embedding table `[V × d]`.
    pub fn embedding(&self, table: Var<'_, T>, ids: &[usize]) -> Result<Var<'_, T>> {
        let (v, d) = table.dims();
        let out = {
            let nodes = self.nodes.borrow();
            let tv = &nodes[table.id].value;
            let mut out = Vec::with_capacity(ids.len() * d);
            for &i in ids {
                if i >= v {
                    return Err(TensorError::OutOfRange {
                        what: "embedding table",
                        index: i,
                        size: v,
                    });
                }
                out.extend_from_slice(&tv[i * d..(i + 1) * d]);
            }
            out
        };
        Ok(self.push(ids.len(), d, out, Op::Embedding { table: table.id, ids: ids.to_vec() }))
    }

    /// One output row per bag: the mean of the bag's table rows. Empty bags
    /// give a zero row.
    pub fn embedding_mean(&self, table: Var<'_, T>, bags: &[Vec<usize>]) -> Result<Var<'_, T>> {
        let (v, d) = table.dims();
        let out = {
            let nodes = self.nodes.borrow();
            let tv = &nodes[table.id].value;
            let mut out = vec![T::zero(); bags.len() * d];
            for (r, bag) in bags.iter().enumerate() {
                if bag.is_empty() {
                    continue;
                }
                let w = T::one() / T::from_usize(bag.len()).unwrap();
                let dst = &mut out[r * d..(r + 1) * d];
                for &i in bag {
                    if i >= v {
                        return Err(TensorError::OutOfRange {
                            what: "embedding table",
                            index: i,
                            size: v,
                        });
                    }
                    for (o, s) in dst.iter_mut().zip(&tv[i * d..(i + 1) * d]) {
                        *o += w * *s;
                    }
                }
            }
            out
        };
        Ok(self.push(bags.len(), d, out, Op::EmbeddingMean { table: table.id, bags: bags.to_vec() }))
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let rows = parts.first().map_or(0, |p| p.dims().0);
        for p in parts {
            if p.dims().0 != rows {
                return Err(mismatch("concat_cols", (rows, 0), p.dims()));
            }
        }
        let cols: usize = parts.iter().map(|p| p.dims().1).sum();
        let out = {
            let nodes = self.nodes.borrow();
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    let n = &nodes[p.id];
                    out.extend_from_slice(&n.value[r * n.cols..(r + 1) * n.cols]);
                }
            }
            out
        };
        Ok(self.push(rows, cols, out, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let cols = parts.first().map_or(0, |p| p.dims().1);
        for p in parts {
            if p.dims().1 != cols {
                return Err(mismatch("concat_rows", (0, cols), p.dims()));
            }
        }
        let rows: usize = parts.iter().map(|p| p.dims().0).sum();
        let out = {
            let nodes = self.nodes.borrow();
            let mut out = Vec::with_capacity(rows * cols);
            for p in parts {
                out.extend_from_slice(&nodes[p.id].value);
            }
            out
        };
        Ok(self.push(rows, cols, out, Op::ConcatRows(parts.iter().map(|p| p.id).collect())))
    }

    /// Constant sparse matrix times a tape matrix.
    pub fn spmm<'t>(&'t self, p: Rc<SparseMatrix<T>>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        let (hr, hc) = h.dims();
        if p.cols() != hr {
            return Err(mismatch("spmm", (p.rows(), p.cols()), (hr, hc)));
        }
        let mut out = vec![T::zero(); p.rows() * hc];
        {
            let nodes = self.nodes.borrow();
            p.mul_dense_acc(&nodes[h.id].value, hc, &mut out);
        }
        let rows = p.rows();
        Ok(self.push(rows, hc, out, Op::SpMM { p, h: h.id }))
    }

    /// Inverted dropout; identity when `train` is false or `rate` is zero.
    pub fn dropout<'t, R: Rng>(&'t self, x: Var<'t, T>, rate: f64, train: bool, rng: &mut R) -> Var<'t, T> {
        if !train || rate <= 0.0 {
            return x;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let n = x.numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        x.mul_const_vec(Rc::new(mask))
    }

    /// Runs reverse accumulation from a `1 × 1` loss.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let ln = &nodes[loss.id];
        if ln.rows * ln.cols != 1 {
            return Err(TensorError::NonScalarLoss(vec![ln.rows, ln.cols]));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop_node(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let params = self.params.borrow().iter().map(|(&p, &n)| (p, n)).collect();
        Ok(Gradients { grads, params })
    }
}

fn slot<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], id: NodeId) -> Option<&'g mut Vec<T>> {
    let n = &nodes[id];
    if !n.requires_grad {
        return None;
    }
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); n.rows * n.cols]))
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// Strides of `op(X)` for a row-major `r × c` buffer.
fn view_strides(cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, cols as isize)
    } else {
        (cols as isize, 1)
    }
}

fn backprop_node<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul { a, b, ta, tb } => {
            let an = &nodes[*a];
            let bn = &nodes[*b];
            let (m, k) = if *ta { (an.cols, an.rows) } else { (an.rows, an.cols) };
            let n = node.cols;
            let (ars, acs) = view_strides(an.cols, *ta);
            let (brs, bcs) = view_strides(bn.cols, *tb);
            if let Some(ga) = slot(grads, nodes, *a) {
                // dA' = G · B'ᵀ
                T::gemm(m, n, k, T::one(), (g, n as isize, 1), (&bn.value, bcs, brs), T::one(), (ga, ars, acs));
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                // dB' = A'ᵀ · G
                T::gemm(k, m, n, T::one(), (&an.value, acs, ars), (g, n as isize, 1), T::one(), (gb, brs, bcs));
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                add_into(gb, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for (d, s) in gb.iter_mut().zip(g) {
                    *d -= *s;
                }
            }
        }
        Op::Mul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((d, s), y) in ga.iter_mut().zip(g).zip(bv) {
                    *d += *s * *y;
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for ((d, s), x) in gb.iter_mut().zip(g).zip(av) {
                    *d += *s * *x;
                }
            }
        }
        Op::AddRow(a, row) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g);
            }
            let c = node.cols;
            if let Some(gr) = slot(grads, nodes, *row) {
                for chunk in g.chunks(c) {
                    add_into(gr, chunk);
                }
            }
        }
        Op::MulRow(a, row) => {
            let c = node.cols;
            let av = &nodes[*a].value;
            let rv = &nodes[*row].value;
            if let Some(ga) = slot(grads, nodes, *a) {
                for (gr, dr) in g.chunks(c).zip(ga.chunks_mut(c)) {
                    for ((d, s), w) in dr.iter_mut().zip(gr).zip(rv) {
                        *d += *s * *w;
                    }
                }
            }
            if let Some(gw) = slot(grads, nodes, *row) {
                for (gr, xr) in g.chunks(c).zip(av.chunks(c)) {
                    for ((d, s), x) in gw.iter_mut().zip(gr).zip(xr) {
                        *d += *s * *x;
                    }
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for (d, s) in ga.iter_mut().zip(g) {
                    *d += *s * *c;
                }
            }
        }
        Op::AddScalar(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g);
            }
        }
        Op::MulConst(a, m) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((d, s), w) in ga.iter_mut().zip(g).zip(m.iter()) {
                    *d += *s * *w;
                }
            }
        }
        Op::MaskRows(a, m) => {
            let c = node.cols;
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((dr, gr), w) in ga.chunks_mut(c).zip(g.chunks(c)).zip(m.iter()) {
                    if *w != T::zero() {
                        for (d, s) in dr.iter_mut().zip(gr) {
                            *d += *s * *w;
                        }
                    }
                }
            }
        }
        Op::Relu(a) => {
            let y = &node.value;
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((d, s), y) in ga.iter_mut().zip(g).zip(y) {
                    if *y > T::zero() {
                        *d += *s;
                    }
                }
            }
        }
        Op::Sigmoid(a) => {
            let y = &node.value;
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((d, s), y) in ga.iter_mut().zip(g).zip(y) {
                    *d += *s * *y * (T::one() - *y);
                }
            }
        }
        Op::Softmax(a) => {
            let c = node.cols;
            let y = &node.value;
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((dr, gr), yr) in ga.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                    let dot = gr.iter().zip(yr).fold(T::zero(), |acc, (s, y)| acc + *s * *y);
                    for ((d, s), y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += *y * (*s - dot);
                    }
                }
            }
        }
        Op::LayerNorm { a, xhat, inv_std } => {
            let c = node.cols;
            let cn = T::from_usize(c).unwrap();
            if let Some(ga) = slot(grads, nodes, *a) {
                for (((dr, gr), xr), is) in ga
                    .chunks_mut(c)
                    .zip(g.chunks(c))
                    .zip(xhat.chunks(c))
                    .zip(inv_std.iter())
                {
                    let gmean = gr.iter().fold(T::zero(), |acc, s| acc + *s) / cn;
                    let gx = gr.iter().zip(xr).fold(T::zero(), |acc, (s, x)| acc + *s * *x) / cn;
                    for ((d, s), x) in dr.iter_mut().zip(gr).zip(xr) {
                        *d += *is * (*s - gmean - *x * gx);
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            let d = node.cols;
            if let Some(gt) = slot(grads, nodes, *table) {
                for (r, &i) in ids.iter().enumerate() {
                    add_into(&mut gt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
        }
        Op::EmbeddingMean { table, bags } => {
            let d = node.cols;
            if let Some(gt) = slot(grads, nodes, *table) {
                for (r, bag) in bags.iter().enumerate() {
                    if bag.is_empty() {
                        continue;
                    }
                    let w = T::one() / T::from_usize(bag.len()).unwrap();
                    for &i in bag {
                        for (o, s) in gt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += w * *s;
                        }
                    }
                }
            }
        }
        Op::SliceCols { a, start } => {
            let ac = nodes[*a].cols;
            let w = node.cols;
            if let Some(ga) = slot(grads, nodes, *a) {
                for (r, gr) in g.chunks(w).enumerate() {
                    add_into(&mut ga[r * ac + start..r * ac + start + w], gr);
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.cols;
            let mut off = 0;
            for &p in parts {
                let w = nodes[p].cols;
                if let Some(gp) = slot(grads, nodes, p) {
                    for (r, dr) in gp.chunks_mut(w).enumerate() {
                        add_into(dr, &g[r * total + off..r * total + off + w]);
                    }
                }
                off += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let n = nodes[p].rows * nodes[p].cols;
                if let Some(gp) = slot(grads, nodes, p) {
                    add_into(gp, &g[off..off + n]);
                }
                off += n;
            }
        }
        Op::WeightedRowSum { a, weights } => {
            let c = node.cols;
            if let Some(ga) = slot(grads, nodes, *a) {
                for (dr, w) in ga.chunks_mut(c).zip(weights) {
                    if *w != T::zero() {
                        for (d, s) in dr.iter_mut().zip(g) {
                            *d += *s * *w;
                        }
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::SpMM { p, h } => {
            let w = node.cols;
            if let Some(gh) = slot(grads, nodes, *h) {
                p.mul_transpose_dense_acc(g, w, gh);
            }
        }
        Op::CrossEntropy { logits, targets, ignore, probs, n_valid } => {
            if *n_valid == 0 {
                return;
            }
            let c = nodes[*logits].cols;
            let scale = g[0] / T::from_usize(*n_valid).unwrap();
            if let Some(gl) = slot(grads, nodes, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    if t == *ignore {
                        continue;
                    }
                    let dr = &mut gl[r * c..(r + 1) * c];
                    for (d, p) in dr.iter_mut().zip(&probs[r * c..(r + 1) * c]) {
                        *d += scale * *p;
                    }
                    dr[t] -= scale;
                }
            }
        }
        Op::BceSum { p, targets } => {
            let pv = &nodes[*p].value;
            let (lo, hi) = bce_bounds::<T>();
            if let Some(gp) = slot(grads, nodes, *p) {
                for ((d, x), y) in gp.iter_mut().zip(pv).zip(targets) {
                    if *x <= lo || *x >= hi {
                        continue;
                    }
                    *d += g[0] * (-*y / *x + (T::one() - *y) / (T::one() - *x));
                }
            }
        }
    }
}

fn bce_bounds<T: Scalar>() -> (T, T) {
    (T::from_f64_lossy(1e-7), T::one() - T::from_f64_lossy(1e-7))
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, NodeId)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss or does not require gradients.
    pub fn get(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        let mut params = self.params.clone();
        params.sort();
        for (pid, nid) in params {
            if let Some(g) = &self.grads[nid] {
                add_into(store.grad_mut(pid), g);
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn dims(&self) -> (usize, usize) {
        self.tape.dims(self.id)
    }

    pub fn numel(&self) -> usize {
        let (r, c) = self.dims();
        r * c
    }

    pub fn value(&self) -> Tensor<T> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::from_vec(&[n.rows, n.cols], n.value.clone()).expect("node shape is consistent")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    fn unary(&self, f: impl Fn(&[T]) -> Vec<T>, op: Op<T>) -> Var<'t, T> {
        let (r, c) = self.dims();
        let out = f(&self.tape.nodes.borrow()[self.id].value);
        self.tape.push(r, c, out, op)
    }

    fn zip(&self, other: &Var<'t, T>, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var<'t, T>> {
        let (l, r) = (self.dims(), other.dims());
        if l != r {
            return Err(mismatch(name, l, r));
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id]
                .value
                .iter()
                .zip(&nodes[other.id].value)
                .map(|(a, b)| f(*a, *b))
                .collect()
        };
        Ok(self.tape.push(l.0, l.1, out, op))
    }

    fn matmul_impl(&self, other: &Var<'t, T>, ta: bool, tb: bool, name: &'static str) -> Result<Var<'t, T>> {
        let (ar, ac) = self.dims();
        let (br, bc) = other.dims();
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(mismatch(name, (m, k), (k2, n)));
        }
        let mut out = vec![T::zero(); m * n];
        {
            let nodes = self.tape.nodes.borrow();
            let (ars, acs) = view_strides(ac, ta);
            let (brs, bcs) = view_strides(bc, tb);
            T::gemm(
                m,
                k,
                n,
                T::one(),
                (&nodes[self.id].value, ars, acs),
                (&nodes[other.id].value, brs, bcs),
                T::zero(),
                (&mut out, n as isize, 1),
            );
        }
        Ok(self.tape.push(m, n, out, Op::MatMul { a: self.id, b: other.id, ta, tb }))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, false, false, "matmul")
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, false, true, "matmul_nt")
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, true, false, "matmul_tn")
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.zip(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.zip(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.zip(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    fn row_broadcast(&self, row: &Var<'t, T>, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var<'t, T>> {
        let (r, c) = self.dims();
        let rd = row.dims();
        if rd != (1, c) {
            return Err(mismatch(name, (r, c), rd));
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            let rv = &nodes[row.id].value;
            nodes[self.id]
                .value
                .chunks(c.max(1))
                .flat_map(|xr| xr.iter().zip(rv).map(|(x, w)| f(*x, *w)).collect::<Vec<_>>())
                .collect()
        };
        Ok(self.tape.push(r, c, out, op))
    }

    /// Adds a `1 × d` row to every row.
    pub fn add_row(&self, row: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.row_broadcast(row, "add_row", |a, b| a + b, Op::AddRow(self.id, row.id))
    }

    /// Multiplies every row elementwise by a `1 × d` row.
    pub fn mul_row(&self, row: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.row_broadcast(row, "mul_row", |a, b| a * b, Op::MulRow(self.id, row.id))
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        self.unary(|x| x.iter().map(|v| *v * c).collect(), Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        self.unary(|x| x.iter().map(|v| *v + c).collect(), Op::AddScalar(self.id))
    }

    pub fn mul_const(&self, m: &Tensor<T>) -> Result<Var<'t, T>> {
        if m.numel() != self.numel() {
            return Err(mismatch("mul_const", self.dims(), m.dims2()));
        }
        Ok(self.mul_const_vec(Rc::new(m.data().to_vec())))
    }

    fn mul_const_vec(&self, m: Rc<Vec<T>>) -> Var<'t, T> {
        let mc = m.clone();
        self.unary(
            move |x| x.iter().zip(mc.iter()).map(|(a, b)| *a * *b).collect(),
            Op::MulConst(self.id, m),
        )
    }

    /// Scales row `i` by `m[i]` (a 0/1 mask zeroes padded rows).
    pub fn mask_rows(&self, m: &[T]) -> Result<Var<'t, T>> {
        let (r, c) = self.dims();
        if m.len() != r {
            return Err(mismatch("mask_rows", (r, c), (m.len(), 1)));
        }
        let mask = Rc::new(m.to_vec());
        let mc = mask.clone();
        Ok(self.unary(
            move |x| {
                x.chunks(c.max(1))
                    .zip(mc.iter())
                    .flat_map(|(row, w)| row.iter().map(move |v| *v * *w))
                    .collect()
            },
            Op::MaskRows(self.id, mask),
        ))
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(|x| x.iter().map(|v| v.max(T::zero())).collect(), Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(
            |x| x.iter().map(|v| T::one() / (T::one() + (-*v).exp())).collect(),
            Op::Sigmoid(self.id),
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> Var<'t, T> {
        let (_, c) = self.dims();
        self.unary(
            |x| {
                let mut out = Vec::with_capacity(x.len());
                for row in x.chunks(c.max(1)) {
                    let mx = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
                    let start = out.len();
                    let mut s = T::zero();
                    for v in row {
                        let e = (*v - mx).exp();
                        s += e;
                        out.push(e);
                    }
                    for o in &mut out[start..] {
                        *o = *o / s;
                    }
                }
                out
            },
            Op::Softmax(self.id),
        )
    }

    /// Row-wise normalization to zero mean and unit variance, without the
    /// affine part.
    pub fn layer_norm(&self) -> Var<'t, T> {
        let (r, c) = self.dims();
        let eps = T::from_f64_lossy(LN_EPS);
        let cn = T::from_usize(c).unwrap();
        let (xhat, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut xhat = Vec::with_capacity(r * c);
            let mut inv_std = Vec::with_capacity(r);
            for row in x.chunks(c.max(1)) {
                let mean = row.iter().fold(T::zero(), |a, v| a + *v) / cn;
                let var = row.iter().fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean)) / cn;
                let is = T::one() / (var + eps).sqrt();
                inv_std.push(is);
                xhat.extend(row.iter().map(|v| (*v - mean) * is));
            }
            (xhat, inv_std)
        };
        let out = xhat.clone();
        self.tape.push(r, c, out, Op::LayerNorm { a: self.id, xhat, inv_std })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let (r, c) = self.dims();
        if start + len > c {
            return Err(mismatch("slice_cols", (r, c), (start, len)));
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            (0..r).flat_map(|i| x[i * c + start..i * c + start + len].to_vec()).collect()
        };
        Ok(self.tape.push(r, len, out, Op::SliceCols { a: self.id, start }))
    }

    /// `Σ_i w_i · row_i` as a `1 × d` row.
    pub fn weighted_row_sum(&self, weights: &[T]) -> Result<Var<'t, T>> {
        let (r, c) = self.dims();
        if weights.len() != r {
            return Err(mismatch("weighted_row_sum", (r, c), (weights.len(), 1)));
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut out = vec![T::zero(); c];
            for (row, w) in x.chunks(c.max(1)).zip(weights) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += *w * *v;
                }
            }
            out
        };
        Ok(self.tape.push(1, c, out, Op::WeightedRowSum { a: self.id, weights: weights.to_vec() }))
    }

    /// Mean of the rows whose mask entry is nonzero; a zero row when none are.
    pub fn masked_mean(&self, mask: &[T]) -> Result<Var<'t, T>> {
        let count = mask.iter().filter(|m| **m != T::zero()).count();
        let weights: Vec<T> = if count == 0 {
            vec![T::zero(); mask.len()]
        } else {
            let inv = T::one() / T::from_usize(count).unwrap();
            mask.iter()
                .map(|m| if *m != T::zero() { inv } else { T::zero() })
                .collect()
        };
        self.weighted_row_sum(&weights)
    }

    pub fn sum(&self) -> Var<'t, T> {
        let s = self.tape.nodes.borrow()[self.id].value.iter().fold(T::zero(), |a, v| a + *v);
        self.tape.push(1, 1, vec![s], Op::Sum(self.id))
    }

    /// Mean token cross-entropy of row-wise logits against `targets`,
    /// skipping rows whose target equals `ignore`. Zero when every row is
    /// ignored.
    pub fn cross_entropy(&self, targets: &[usize], ignore: usize) -> Result<Var<'t, T>> {
        let (r, c) = self.dims();
        if targets.len() != r {
            return Err(mismatch("cross_entropy", (r, c), (targets.len(), 1)));
        }
        let (loss, probs, n_valid) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut probs = vec![T::zero(); r * c];
            let mut total = T::zero();
            let mut n_valid = 0usize;
            for (i, &t) in targets.iter().enumerate() {
                if t == ignore {
                    continue;
                }
                if t >= c {
                    return Err(TensorError::OutOfRange { what: "class", index: t, size: c });
                }
                let row = &x[i * c..(i + 1) * c];
                let mx = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
                let mut s = T::zero();
                for (p, v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                    *p = (*v - mx).exp();
                    s += *p;
                }
                for p in &mut probs[i * c..(i + 1) * c] {
                    *p = *p / s;
                }
                total += s.ln() + mx - row[t];
                n_valid += 1;
            }
            let loss = if n_valid == 0 { T::zero() } else { total / T::from_usize(n_valid).unwrap() };
            (loss, probs, n_valid)
        };
        Ok(self.tape.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy { logits: self.id, targets: targets.to_vec(), ignore, probs, n_valid },
        ))
    }

    /// Summed binary cross-entropy of probabilities against 0/1 targets,
    /// with probabilities clipped to `[1e-7, 1 - 1e-7]`.
    pub fn bce_sum(&self, targets: &[T]) -> Result<Var<'t, T>> {
        if targets.len() != self.numel() {
            return Err(mismatch("bce_sum", self.dims(), (targets.len(), 1)));
        }
        let (lo, hi) = bce_bounds::<T>();
        let loss = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id]
                .value
                .iter()
                .zip(targets)
                .fold(T::zero(), |acc, (p, y)| {
                    let p = p.max(lo).min(hi);
                    acc - (*y * p.ln() + (T::one() - *y) * (T::one() - p).ln())
                })
        };
        Ok(self.tape.push(1, 1, vec![loss], Op::BceSum { p: self.id, targets: targets.to_vec() }))
    }
}

/// Shape helper for callers that hold plain tensors.
pub fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    dims2(shape)
}
