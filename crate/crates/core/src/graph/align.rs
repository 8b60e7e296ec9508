use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::merge::StaticGraph;
use crate::minilang::AstGraph;

/// Local graphs up to this size are aligned by exhaustive search.
pub const EXACT_LIMIT: usize = 12;
/// Search-node budget for the exhaustive aligner; past it the best mapping
/// found so far is kept.
const SEARCH_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// Only the patch's own edges.
    #[default]
    Local,
    /// Static-graph edges among occupied slots plus the patch's own edges.
    Global,
}

fn candidates(local: &AstGraph, global: &StaticGraph) -> Vec<Vec<usize>> {
    local
        .nodes
        .iter()
        .map(|n| global.slots(&n.label, n.depth).to_vec())
        .collect()
}

fn consistent(u: usize, s: usize, map: &[Option<usize>], adj: &[Vec<usize>], global: &AstGraph) -> bool {
    adj[u].iter().all(|&w| match map[w] {
        Some(t) => global.has_edge(s, t),
        None => true,
    })
}

/// Order used by both aligners: rarest candidates first, then higher
/// degree, then lower id.
fn search_order(cands: &[Vec<usize>], adj: &[Vec<usize>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[a]
            .len()
            .cmp(&cands[b].len())
            .then(adj[b].len().cmp(&adj[a].len()))
            .then(a.cmp(&b))
    });
    order
}

/// Injective, label- and depth-preserving partial mapping from `local` into
/// the static graph such that mapped local edges land on static edges.
/// Exhaustive for small graphs, greedy otherwise; both deterministic.
pub fn align_mapping(local: &AstGraph, global: &StaticGraph) -> Vec<Option<usize>> {
    let cands = candidates(local, global);
    let adj = local.adjacency();
    let order = search_order(&cands, &adj);
    if local.node_count() <= EXACT_LIMIT {
        exact(&cands, &adj, &order, &global.graph, global.len())
    } else {
        greedy(&cands, &adj, &order, &global.graph, global.len())
    }
}

fn greedy(cands: &[Vec<usize>], adj: &[Vec<usize>], order: &[usize], g: &AstGraph, n_global: usize) -> Vec<Option<usize>> {
    let mut map = vec![None; cands.len()];
    let mut used = vec![false; n_global];
    for &u in order {
        if let Some(&s) = cands[u].iter().find(|&&s| !used[s] && consistent(u, s, &map, adj, g)) {
            map[u] = Some(s);
            used[s] = true;
        }
    }
    map
}

struct Search<'a> {
    cands: &'a [Vec<usize>],
    adj: &'a [Vec<usize>],
    order: &'a [usize],
    g: &'a AstGraph,
    /// `reachable[k]`: nodes in `order[k..]` that have any candidate.
    reachable: Vec<usize>,
    map: Vec<Option<usize>>,
    used: Vec<bool>,
    best: usize,
    best_map: Vec<Option<usize>>,
    visits: usize,
}

impl Search<'_> {
    fn go(&mut self, k: usize, count: usize) {
        self.visits += 1;
        if count + self.reachable[k] <= self.best {
            return;
        }
        if k == self.order.len() {
            if count > self.best {
                self.best = count;
                self.best_map = self.map.clone();
            }
            return;
        }
        if self.visits > SEARCH_BUDGET {
            return;
        }
        let u = self.order[k];
        for &s in &self.cands[u] {
            if self.used[s] || !consistent(u, s, &self.map, self.adj, self.g) {
                continue;
            }
            self.map[u] = Some(s);
            self.used[s] = true;
            self.go(k + 1, count + 1);
            self.map[u] = None;
            self.used[s] = false;
        }
        self.go(k + 1, count);
    }
}

fn exact(cands: &[Vec<usize>], adj: &[Vec<usize>], order: &[usize], g: &AstGraph, n_global: usize) -> Vec<Option<usize>> {
    let mut reachable = vec![0; order.len() + 1];
    for k in (0..order.len()).rev() {
        reachable[k] = reachable[k + 1] + usize::from(!cands[order[k]].is_empty());
    }
    // Seed with the greedy answer so the bound prunes from the start.
    let seed = greedy(cands, adj, order, g, n_global);
    let mut s = Search {
        cands,
        adj,
        order,
        g,
        reachable,
        map: vec![None; cands.len()],
        used: vec![false; n_global],
        best: seed.iter().flatten().count(),
        best_map: seed,
        visits: 0,
    };
    s.go(0, 0);
    s.best_map
}

/// A patch graph placed onto the fixed-size slot layout of the static graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedGraph {
    pub n_g: usize,
    /// Slot of each local node; `None` when no slot was left.
    pub node_slot: Vec<Option<usize>>,
    /// Occupied slots in ascending order with their labels.
    pub occupied: Vec<(usize, String)>,
    /// Undirected slot pairs `(min, max)`.
    pub edges: BTreeSet<(usize, usize)>,
    /// Local nodes that matched a static node.
    pub matched: usize,
}

impl AlignedGraph {
    pub fn node_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_g];
        for (s, _) in &self.occupied {
            m[*s] = true;
        }
        m
    }

    pub fn real_nodes(&self) -> usize {
        self.occupied.len()
    }

    /// Dense `n_g × n_g` 0/1 adjacency.
    pub fn dense_adjacency(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n_g * self.n_g];
        for &(x, y) in &self.edges {
            a[x * self.n_g + y] = 1.0;
            a[y * self.n_g + x] = 1.0;
        }
        a
    }

    /// Occupied slots renumbered `0..real_nodes()` in slot order, with the
    /// edges among them. PAD slots are isolated and zero, so message passing
    /// over this compact form equals the full-size computation on real rows.
    pub fn compact(&self) -> (Vec<&str>, Vec<(usize, usize)>) {
        let pos = |s: usize| self.occupied.binary_search_by_key(&s, |(x, _)| *x).unwrap();
        let labels = self.occupied.iter().map(|(_, l)| l.as_str()).collect();
        let edges = self.edges.iter().map(|&(a, b)| (pos(a), pos(b))).collect();
        (labels, edges)
    }
}

/// Places `local` onto the slot layout: matched nodes take their static
/// slots; unmatched nodes take slots past the static graph, then unused
/// static slots, in ascending local id.
pub fn align_graph(local: &AstGraph, global: &StaticGraph, edges: EdgeMode) -> AlignedGraph {
    let n_g = global.n_g.max(global.len());
    let mapping = align_mapping(local, global);
    let matched = mapping.iter().flatten().count();
    let mut used = vec![false; n_g];
    for s in mapping.iter().flatten() {
        used[*s] = true;
    }
    let mut free = (global.len()..n_g).chain(0..global.len()).filter(|&s| !used[s]).collect::<Vec<_>>().into_iter();
    let node_slot: Vec<Option<usize>> = mapping
        .iter()
        .map(|m| match m {
            Some(s) => Some(*s),
            None => free.next(),
        })
        .collect();
    let mut occupied: Vec<(usize, String)> = node_slot
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (s, local.label(i).to_string())))
        .collect();
    occupied.sort();
    let mut out_edges = BTreeSet::new();
    for &(a, b) in &local.edges {
        if let (Some(x), Some(y)) = (node_slot[a], node_slot[b]) {
            out_edges.insert((x.min(y), x.max(y)));
        }
    }
    if edges == EdgeMode::Global {
        let occ: Vec<bool> = {
            let mut m = vec![false; n_g];
            for (s, _) in &occupied {
                m[*s] = true;
            }
            m
        };
        for &(a, b) in &global.graph.edges {
            if occ[a] && occ[b] {
                out_edges.insert((a, b));
            }
        }
    }
    AlignedGraph {
        n_g,
        node_slot,
        occupied,
        edges: out_edges,
        matched,
    }
}
