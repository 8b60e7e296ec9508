//! Graph intention: merging and pruning AST graphs into a static graph,
//! aligning per-patch graphs to it, and the GCN encoder with pooling.

pub mod align;
pub mod gcn;
pub mod merge;

use thiserror::Error;

pub use align::{align_graph, align_mapping, AlignedGraph, EdgeMode};
pub use gcn::{
    gcn_forward, graph_cross_resnet, graph_pool, laplacian_sparse, pool_mask, renormalized_laplacian, GcnConfig,
    Pooling,
};
pub use merge::{
    build_static_graph, merge_graphs, merge_matching, merge_with_map, prune_graph, prune_keep, prune_or_keep,
    StaticGraph,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("no leaf matches a patch token")]
    EmptyAfterPrune,
    #[error("adjacency is not symmetric at ({row}, {col})")]
    NonSymmetric { row: usize, col: usize },
}
