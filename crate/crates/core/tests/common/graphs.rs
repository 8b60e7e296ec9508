use std::collections::BTreeSet;

use patchrep::graph::{align_graph, align_mapping, build_static_graph, merge_graphs, merge_with_map, EdgeMode};
use patchrep::minilang::AstGraph;
use patchrep::nn::Init;
use patchrep::tensor::ParamStore;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A rooted labeled tree: `parent[i] < i` for `i > 0`.
#[derive(Debug, Clone)]
pub struct Tree {
    pub parent: Vec<usize>,
    pub labels: Vec<String>,
}

impl Tree {
    pub fn depth(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            self.depth(self.parent[i]) + 1
        }
    }

    pub fn graph(&self) -> AstGraph {
        let mut g = AstGraph::default();
        for i in 0..self.labels.len() {
            g.add_node(self.labels[i].clone(), self.depth(i));
        }
        for i in 1..self.labels.len() {
            g.add_edge(self.parent[i], i);
        }
        g
    }
}

pub fn tree(max: usize, alphabet: &'static [&'static str]) -> impl Strategy<Value = Tree> {
    (1..=max).prop_flat_map(move |n| {
        (
            prop::collection::vec(any::<prop::sample::Index>(), n - 1),
            prop::collection::vec(prop::sample::select(alphabet), n),
        )
            .prop_map(|(ps, ls)| Tree {
                parent: std::iter::once(0).chain(ps.iter().enumerate().map(|(i, p)| p.index(i + 1))).collect(),
                labels: ls.into_iter().map(String::from).collect(),
            })
    })
}

pub fn neighbor_labels(g: &AstGraph, i: usize) -> BTreeSet<String> {
    g.edges
        .iter()
        .filter_map(|&(a, b)| if a == i { Some(b) } else if b == i { Some(a) } else { None })
        .map(|j| g.nodes[j].label.clone())
        .collect()
}

/// Merge predicate written from the rule: same label and depth, and a
/// shared neighbor label (or both isolated).
pub fn may_merge(a: &AstGraph, i: usize, b: &AstGraph, j: usize) -> bool {
    if a.nodes[i].label != b.nodes[j].label || a.nodes[i].depth != b.nodes[j].depth {
        return false;
    }
    let (la, lb) = (neighbor_labels(a, i), neighbor_labels(b, j));
    (la.is_empty() && lb.is_empty()) || !la.is_disjoint(&lb)
}

/// Largest set of disjoint mergeable pairs, by trying every assignment.
pub fn brute_max_merge(a: &AstGraph, b: &AstGraph) -> usize {
    fn go(i: usize, a: &AstGraph, b: &AstGraph, used: &mut Vec<bool>) -> usize {
        if i == a.nodes.len() {
            return 0;
        }
        let mut best = go(i + 1, a, b, used);
        for j in 0..b.nodes.len() {
            if !used[j] && may_merge(a, i, b, j) {
                used[j] = true;
                best = best.max(1 + go(i + 1, a, b, used));
                used[j] = false;
            }
        }
        best
    }
    go(0, a, b, &mut vec![false; b.nodes.len()])
}

pub fn label_depth_multiset(g: &AstGraph) -> Vec<(String, usize)> {
    let mut v: Vec<_> = g.nodes.iter().map(|n| (n.label.clone(), n.depth)).collect();
    v.sort();
    v
}

/// Characteristic polynomial coefficients `c[0..=n]` of `x^n + c1 x^{n-1} + ...`
/// by Faddeev-LeVerrier.
pub fn char_poly(n: usize, a: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; n + 1];
    c[0] = 1.0;
    let mut m = vec![0.0; n * n];
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..n {
                    s += a[i * n + t] * m[t * n + j];
                }
                next[i * n + j] = s + if i == j { c[k - 1] } else { 0.0 };
            }
        }
        m = next;
        let mut tr = 0.0;
        for i in 0..n {
            for t in 0..n {
                tr += a[i * n + t] * m[t * n + i];
            }
        }
        c[k] = -tr / k as f64;
    }
    c
}

/// All complex roots by Durand-Kerner iteration.
pub fn poly_roots(c: &[f64]) -> Vec<(f64, f64)> {
    let n = c.len() - 1;
    let eval = |z: (f64, f64)| {
        let mut acc = (1.0, 0.0);
        for &ck in &c[1..] {
            acc = (acc.0 * z.0 - acc.1 * z.1 + ck, acc.0 * z.1 + acc.1 * z.0);
        }
        acc
    };
    let mut roots: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let (r, th) = (0.9f64, 0.4 + k as f64 * 2.0 * std::f64::consts::PI / n as f64);
            (r * th.cos(), r * th.sin())
        })
        .collect();
    for _ in 0..2000 {
        for i in 0..n {
            let mut den = (1.0, 0.0);
            for j in 0..n {
                if i != j {
                    let d = (roots[i].0 - roots[j].0, roots[i].1 - roots[j].1);
                    den = (den.0 * d.0 - den.1 * d.1, den.0 * d.1 + den.1 * d.0);
                }
            }
            let num = eval(roots[i]);
            let q = den.0 * den.0 + den.1 * den.1;
            if q == 0.0 {
                roots[i].0 += 1e-9;
                continue;
            }
            let step = ((num.0 * den.0 + num.1 * den.1) / q, (num.1 * den.0 - num.0 * den.1) / q);
            roots[i] = (roots[i].0 - step.0, roots[i].1 - step.1);
        }
    }
    roots
}

pub fn random_adjacency(n: usize, bits: &[bool]) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if bits[k] {
                a[i * n + j] = 1.0;
                a[j * n + i] = 1.0;
            }
            k += 1;
        }
    }
    a
}

pub fn graph_with_bits() -> impl Strategy<Value = (usize, Vec<bool>)> {
    (1usize..=10).prop_flat_map(|n| (Just(n), prop::collection::vec(any::<bool>(), n * (n - 1) / 2)))
}

/// Largest injective, label- and depth-preserving partial map from `local`
/// into `global` whose mapped edges are global edges, by full enumeration.
pub fn brute_max_align(local: &AstGraph, global: &AstGraph) -> usize {
    fn go(i: usize, l: &AstGraph, g: &AstGraph, map: &mut Vec<Option<usize>>, used: &mut Vec<bool>) -> usize {
        if i == l.nodes.len() {
            return map.iter().flatten().count();
        }
        let mut best = go(i + 1, l, g, map, used);
        for s in 0..g.nodes.len() {
            if used[s] || l.nodes[i] != g.nodes[s] {
                continue;
            }
            let ok = (0..i).all(|k| match map[k] {
                Some(t) if l.has_edge(i, k) => g.has_edge(s, t),
                _ => true,
            });
            if ok {
                map[i] = Some(s);
                used[s] = true;
                best = best.max(go(i + 1, l, g, map, used));
                map[i] = None;
                used[s] = false;
            }
        }
        best
    }
    go(0, local, global, &mut vec![None; local.nodes.len()], &mut vec![false; global.nodes.len()])
}

pub fn gcn_setup(d: usize, layers: usize, seed: u64) -> (ParamStore<f64>, Vec<patchrep::tensor::ParamId>) {
    let mut store = ParamStore::new();
    let ids = {
        let mut init = Init::new(&mut store, seed);
        (0..layers).map(|l| init.xavier(&format!("w{l}"), &[d, d])).collect()
    };
    (store, ids)
}

/// Seeded counterpart of [`tree`] for non-proptest callers.
pub fn random_tree(rng: &mut ChaCha8Rng, max: usize, alphabet: &[&str]) -> Tree {
    let n = rng.gen_range(1..=max);
    Tree {
        parent: (0..n).map(|i| if i == 0 { 0 } else { rng.gen_range(0..i) }).collect(),
        labels: (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string()).collect(),
    }
}

fn ensure(ok: bool, what: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

/// Merge size equals the brute-force optimum, merged pairs obey the rule,
/// edges are the mapped union and the node count is bounded by the parts.
pub fn check_merge(ga: &AstGraph, gb: &AstGraph) -> Result<(), String> {
    let (m, map) = merge_with_map(ga, gb);
    let best = brute_max_merge(ga, gb);
    ensure(m.node_count() == ga.node_count() + gb.node_count() - best, "merge is not maximal")?;
    for (j, &t) in map.iter().enumerate() {
        if t < ga.node_count() {
            ensure(may_merge(ga, t, gb, j), "merged pair violates the rule")?;
        }
    }
    let mut want: BTreeSet<(usize, usize)> = ga.edges.clone();
    for &(x, y) in &gb.edges {
        want.insert((map[x].min(map[y]), map[x].max(map[y])));
    }
    ensure(m.edges == want, "edges are not the mapped union")?;
    ensure(m.node_count() <= ga.node_count() + gb.node_count(), "more nodes than both parts")?;
    ensure(m.node_count() >= ga.node_count().max(gb.node_count()), "fewer nodes than the larger part")
}

/// Merging a graph with itself, directly or through the static graph,
/// gives the graph back.
pub fn check_self_merge(g: &AstGraph) -> Result<(), String> {
    ensure(merge_graphs(g, g) == *g, "self-merge changed the graph")?;
    ensure(build_static_graph(&[g.clone(), g.clone()], 100).graph == *g, "static graph of two copies differs")
}

/// Label-disjoint graphs merge into their disjoint union.
pub fn check_disjoint_union(ga: &AstGraph, gb: &AstGraph) -> Result<(), String> {
    let m = merge_graphs(ga, gb);
    ensure(m.node_count() == ga.node_count() + gb.node_count(), "node count is not the sum")?;
    ensure(m.edge_count() == ga.edge_count() + gb.edge_count(), "edge count is not the sum")?;
    let mut both = label_depth_multiset(ga);
    both.extend(label_depth_multiset(gb));
    both.sort();
    ensure(label_depth_multiset(&m) == both, "labels are not the union")
}

/// Alignment is injective, label preserving, as large as exhaustive search
/// finds, and keeps every local node.
pub fn check_align(local: &AstGraph, global: &AstGraph) -> Result<(), String> {
    let s = build_static_graph(std::slice::from_ref(global), 100);
    ensure(s.graph == *global, "static graph of one tree differs from it")?;
    let map = align_mapping(local, &s);
    let matched: Vec<usize> = map.iter().flatten().copied().collect();
    let distinct: BTreeSet<usize> = matched.iter().copied().collect();
    ensure(distinct.len() == matched.len(), "mapping is not injective")?;
    for (u, m) in map.iter().enumerate() {
        if let Some(t) = m {
            ensure(local.nodes[u] == global.nodes[*t], "mapped nodes differ in label or depth")?;
        }
    }
    ensure(matched.len() == brute_max_align(local, global), "match is not maximal")?;
    ensure(align_graph(local, &s, EdgeMode::Local).real_nodes() == local.node_count(), "local nodes lost")
}
