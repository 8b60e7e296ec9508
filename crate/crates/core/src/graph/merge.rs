use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::GraphError;
use crate::minilang::AstGraph;

fn neighbor_labels<'g>(g: &'g AstGraph, adj: &[Vec<usize>], i: usize) -> BTreeSet<&'g str> {
    adj[i].iter().map(|&n| g.label(n)).collect()
}

/// Two nodes merge when label and depth agree and they share a neighbor
/// label. Isolated nodes have no neighbors to compare, so two isolated
/// nodes with equal label and depth also merge.
fn mergeable(a: &AstGraph, adj_a: &[Vec<usize>], i: usize, b: &AstGraph, adj_b: &[Vec<usize>], j: usize) -> bool {
    if a.nodes[i] != b.nodes[j] {
        return false;
    }
    let la = neighbor_labels(a, adj_a, i);
    let lb = neighbor_labels(b, adj_b, j);
    (la.is_empty() && lb.is_empty()) || la.intersection(&lb).next().is_some()
}

/// Maximum matching of mergeable pairs: `result[i]` is the node of `b`
/// matched with node `i` of `a`. Free candidates are tried first, in
/// ascending id, so merging a graph with itself matches every node to
/// itself.
pub fn merge_matching(a: &AstGraph, b: &AstGraph) -> Vec<Option<usize>> {
    let (adj_a, adj_b) = (a.adjacency(), b.adjacency());
    let cands: Vec<Vec<usize>> = (0..a.node_count())
        .map(|i| (0..b.node_count()).filter(|&j| mergeable(a, &adj_a, i, b, &adj_b, j)).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; b.node_count()];

    fn augment(u: usize, cands: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        if let Some(&v) = cands[u].iter().find(|&&v| owner[v].is_none()) {
            owner[v] = Some(u);
            return true;
        }
        for &v in &cands[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if augment(owner[v].unwrap(), cands, owner, seen) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }

    for u in 0..a.node_count() {
        let mut seen = vec![false; b.node_count()];
        augment(u, &cands, &mut owner, &mut seen);
    }
    let mut out = vec![None; a.node_count()];
    for (v, o) in owner.iter().enumerate() {
        if let Some(u) = o {
            out[*u] = Some(v);
        }
    }
    out
}

/// Merges `b` into `a`. Returns the merged graph (nodes of `a` keep their
/// ids, unmatched nodes of `b` follow in order) and where each node of `b`
/// went.
pub fn merge_with_map(a: &AstGraph, b: &AstGraph) -> (AstGraph, Vec<usize>) {
    let matching = merge_matching(a, b);
    let mut g = a.clone();
    let mut b_to = vec![usize::MAX; b.node_count()];
    for (i, m) in matching.iter().enumerate() {
        if let Some(j) = m {
            b_to[*j] = i;
        }
    }
    for (j, n) in b.nodes.iter().enumerate() {
        if b_to[j] == usize::MAX {
            b_to[j] = g.add_node(n.label.clone(), n.depth);
        }
    }
    for &(x, y) in &b.edges {
        g.add_edge(b_to[x], b_to[y]);
    }
    (g, b_to)
}

pub fn merge_graphs(a: &AstGraph, b: &AstGraph) -> AstGraph {
    merge_with_map(a, b).0
}

/// Nodes whose subtree reaches a leaf labeled with a patch token, together
/// with every ancestor of such a leaf. Parents are the neighbors one level
/// up, so this also works on merged graphs.
pub fn prune_keep(g: &AstGraph, tokens: &HashSet<String>) -> Vec<usize> {
    let adj = g.adjacency();
    let is_leaf = |i: usize| adj[i].iter().all(|&n| g.nodes[n].depth <= g.nodes[i].depth);
    let mut keep = vec![false; g.node_count()];
    let mut stack: Vec<usize> = (0..g.node_count())
        .filter(|&i| is_leaf(i) && tokens.contains(g.label(i)))
        .collect();
    while let Some(u) = stack.pop() {
        if keep[u] {
            continue;
        }
        keep[u] = true;
        for &n in &adj[u] {
            if g.nodes[n].depth + 1 == g.nodes[u].depth && !keep[n] {
                stack.push(n);
            }
        }
    }
    (0..g.node_count()).filter(|&i| keep[i]).collect()
}

pub fn prune_graph(g: &AstGraph, tokens: &HashSet<String>) -> Result<AstGraph, GraphError> {
    let keep = prune_keep(g, tokens);
    if keep.is_empty() {
        return Err(GraphError::EmptyAfterPrune);
    }
    Ok(g.induced(&keep))
}

/// Pruned graph, or the whole graph when nothing matches.
pub fn prune_or_keep(g: &AstGraph, tokens: &HashSet<String>) -> AstGraph {
    prune_graph(g, tokens).unwrap_or_else(|_| g.clone())
}

/// Merged union of training graphs with a node-count cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StaticDoc", into = "StaticDoc")]
pub struct StaticGraph {
    pub graph: AstGraph,
    /// Number of input graphs merged into each node.
    pub freq: Vec<usize>,
    pub n_g: usize,
    node_index: BTreeMap<(String, usize), Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    label: String,
    depth: usize,
    slots: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct StaticDoc {
    graph: AstGraph,
    freq: Vec<usize>,
    n_g: usize,
    node_index: Vec<IndexEntry>,
}

impl From<StaticGraph> for StaticDoc {
    fn from(s: StaticGraph) -> Self {
        StaticDoc {
            node_index: s
                .node_index
                .into_iter()
                .map(|((label, depth), slots)| IndexEntry { label, depth, slots })
                .collect(),
            graph: s.graph,
            freq: s.freq,
            n_g: s.n_g,
        }
    }
}

impl From<StaticDoc> for StaticGraph {
    fn from(d: StaticDoc) -> Self {
        StaticGraph::new(d.graph, d.freq, d.n_g)
    }
}

impl StaticGraph {
    fn new(graph: AstGraph, freq: Vec<usize>, n_g: usize) -> Self {
        let mut node_index: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
        for (i, n) in graph.nodes.iter().enumerate() {
            node_index.entry((n.label.clone(), n.depth)).or_default().push(i);
        }
        StaticGraph {
            graph,
            freq,
            n_g,
            node_index,
        }
    }

    pub fn len(&self) -> usize {
        self.graph.node_count()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.node_count() == 0
    }

    /// Slots carrying `(label, depth)`, ascending.
    pub fn slots(&self, label: &str, depth: usize) -> &[usize] {
        self.node_index
            .get(&(label.to_string(), depth))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Left fold of [`merge_graphs`]; when the result exceeds `n_g` nodes the
/// least frequent are dropped (ties drop the highest id first).
pub fn build_static_graph(graphs: &[AstGraph], n_g: usize) -> StaticGraph {
    let mut g = AstGraph::default();
    let mut freq: Vec<usize> = Vec::new();
    for h in graphs {
        let (merged, map) = merge_with_map(&g, h);
        freq.resize(merged.node_count(), 0);
        for &m in &map {
            freq[m] += 1;
        }
        g = merged;
    }
    if g.node_count() > n_g {
        let mut order: Vec<usize> = (0..g.node_count()).collect();
        order.sort_by(|&x, &y| freq[x].cmp(&freq[y]).then(y.cmp(&x)));
        let drop: HashSet<usize> = order[..g.node_count() - n_g].iter().copied().collect();
        let keep: Vec<usize> = (0..g.node_count()).filter(|i| !drop.contains(i)).collect();
        freq = keep.iter().map(|&i| freq[i]).collect();
        g = g.induced(&keep);
    }
    StaticGraph::new(g, freq, n_g)
}
