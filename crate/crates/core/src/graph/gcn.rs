use std::rc::Rc;

use patchrep_tensor::{ParamId, Result, Scalar, SparseMatrix, Var};
use serde::{Deserialize, Serialize};

use super::align::EdgeMode;
use super::GraphError;
use crate::nn::{bool_mask, Ctx, Linear};

/// `(D+I)^(-1/2) (A+I) (D+I)^(-1/2)` for a dense symmetric 0/1 matrix.
pub fn renormalized_laplacian(n: usize, a: &[f64]) -> std::result::Result<Vec<f64>, GraphError> {
    assert_eq!(a.len(), n * n, "adjacency must be {n}x{n}");
    for i in 0..n {
        for j in 0..n {
            if a[i * n + j] != a[j * n + i] {
                return Err(GraphError::NonSymmetric { row: i, col: j });
            }
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = (0..n).filter(|&j| j != i).map(|j| a[i * n + j]).sum();
            1.0 / (deg + 1.0).sqrt()
        })
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let aij = if i == j { 1.0 } else { a[i * n + j] };
            p[i * n + j] = inv_sqrt[i] * aij * inv_sqrt[j];
        }
    }
    Ok(p)
}

/// Sparse renormalized Laplacian of an undirected edge list on `n` nodes.
pub fn laplacian_sparse<T: Scalar>(n: usize, edges: &[(usize, usize)]) -> SparseMatrix<T> {
    let mut deg = vec![0usize; n];
    for &(a, b) in edges {
        deg[a] += 1;
        deg[b] += 1;
    }
    let s: Vec<f64> = deg.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
    let mut trip: Vec<(usize, usize, T)> = (0..n).map(|i| (i, i, T::from_f64_lossy(s[i] * s[i]))).collect();
    for &(a, b) in edges {
        let w = T::from_f64_lossy(s[a] * s[b]);
        trip.push((a, b, w));
        trip.push((b, a, w));
    }
    SparseMatrix::from_triplets(n, n, trip)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Mean over every real node.
    #[default]
    All,
    /// Mean over real nodes whose label occurs in a changed line, or over
    /// all real nodes when none does.
    Changed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub layers: usize,
    pub alpha: f64,
    /// Identity-mixing weight per layer.
    pub betas: Vec<f64>,
    pub pooling: Pooling,
    pub edges: EdgeMode,
}

impl GcnConfig {
    /// `β_l = 0.5 / (l + 1)`.
    pub fn default_betas(layers: usize) -> Vec<f64> {
        (0..layers).map(|l| 0.5 / (l as f64 + 1.0)).collect()
    }
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            layers: 2,
            alpha: 0.1,
            betas: Self::default_betas(2),
            pooling: Pooling::All,
            edges: EdgeMode::Local,
        }
    }
}

/// `H' = relu(((1-α) P H + α H0) ((1-β) I + β W))`, repeated per layer, with
/// rows outside `node_mask` re-zeroed after every layer.
pub fn gcn_forward<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    h0: Var<'t, T>,
    p: Rc<SparseMatrix<T>>,
    node_mask: Option<&[bool]>,
    alpha: f64,
    betas: &[f64],
    weights: &[ParamId],
) -> Result<Var<'t, T>> {
    assert_eq!(betas.len(), weights.len(), "one beta per GCN layer");
    let a = T::from_f64_lossy(alpha);
    let mask = node_mask.map(bool_mask::<T>);
    let initial = h0.scale(a);
    let mut h = h0;
    for (&beta, &w) in betas.iter().zip(weights) {
        let b = T::from_f64_lossy(beta);
        let m = cx.tape.spmm(p.clone(), h)?.scale(T::one() - a).add(&initial)?;
        let mixed = m.scale(T::one() - b).add(&m.matmul(&cx.p(w))?.scale(b))?;
        h = mixed.relu();
        if let Some(mask) = &mask {
            h = h.mask_rows(mask)?;
        }
    }
    Ok(h)
}

/// `w_G`: mean of the rows selected by `mask`; zero when none is selected.
pub fn graph_pool<'t, T: Scalar>(h: Var<'t, T>, mask: &[bool]) -> Result<Var<'t, T>> {
    h.masked_mean(&bool_mask(mask))
}

/// Pooling mask for the chosen mode.
pub fn pool_mask(labels: &[&str], mode: Pooling, changed: &std::collections::HashSet<String>) -> Vec<bool> {
    match mode {
        Pooling::All => vec![true; labels.len()],
        Pooling::Changed => {
            let m: Vec<bool> = labels.iter().map(|l| changed.contains(*l)).collect();
            if m.iter().any(|x| *x) {
                m
            } else {
                vec![true; labels.len()]
            }
        }
    }
}

/// Sum of the three paths `w_cbp`, `w_cbp + w_cap` and `w_cap`, through
/// relu and a fully connected layer.
pub fn graph_cross_resnet<'t, T: Scalar>(
    cx: &Ctx<'t, '_, T>,
    fc: &Linear,
    w_cbp: Var<'t, T>,
    w_cap: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let both = w_cbp.add(&w_cap)?;
    let s = w_cbp.add(&both)?.add(&w_cap)?;
    fc.forward(cx, s.relu())
}
