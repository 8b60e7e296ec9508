//! A small Java-like language: lexer, recursive-descent parser, and the
//! conversion of its syntax trees into labeled undirected graphs.
//!
//! Grammar (anything else is a [`ParseError`]):
//!
//! ```text
//! program  := class+
//! class    := "class" IDENT "{" member* "}"
//! member   := type IDENT "(" params? ")" block | type IDENT ("=" expr)? ";"
//! stmt     := block | "if" "(" expr ")" stmt ("else" stmt)? | "while" "(" expr ")" stmt
//!           | "return" expr? ";" | type IDENT ("=" expr)? ";" | lvalue "=" expr ";" | expr ";"
//! expr     := operands joined by == != < > + - * / (usual precedence, left assoc)
//! postfix  := primary ("." IDENT args? | args)*
//! primary  := IDENT | INT | STRING | "(" expr ")"
//! ```

mod lexer;
mod parser;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use parser::parse_source;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at {line}:{col}: expected one of {expected:?}, found {found:?}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub expected: Vec<String>,
    pub found: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, col: usize, expected: Vec<String>, found: &str) -> Self {
        ParseError {
            line,
            col,
            expected,
            found: found.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("schema error: {0}")]
pub struct SchemaError(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub id: usize,
    pub label: String,
    pub depth: usize,
    pub children: Vec<usize>,
}

/// A syntax tree stored flat; node `i` has id `i` and the root is node 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstTree {
    pub nodes: Vec<AstNode>,
}

impl AstTree {
    pub fn root(&self) -> &AstNode {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nested `{"label", "children"}` document.
    pub fn to_json(&self) -> Value {
        fn go(t: &AstTree, id: usize) -> Value {
            let n = &t.nodes[id];
            serde_json::json!({
                "label": n.label,
                "children": n.children.iter().map(|&c| go(t, c)).collect::<Vec<_>>(),
            })
        }
        if self.nodes.is_empty() {
            Value::Null
        } else {
            go(self, 0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GraphNode {
    pub label: String,
    pub depth: usize,
}

/// Labeled undirected graph with dense node ids. Edges are stored once as
/// `(min, max)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc", into = "GraphDoc")]
pub struct AstGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl AstGraph {
    pub fn add_node(&mut self, label: impl Into<String>, depth: usize) -> usize {
        self.nodes.push(GraphNode {
            label: label.into(),
            depth,
        });
        self.nodes.len() - 1
    }

    /// Adds an undirected edge; self-loops and repeats are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize) {
        assert!(a < self.nodes.len() && b < self.nodes.len(), "edge ({a}, {b}) out of range");
        if a != b {
            self.edges.insert((a.min(b), a.max(b)));
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.nodes[id].label
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        self.bfs_depths(0).iter().all(|d| d.is_some())
    }

    /// Hop distance from `root` to every node.
    pub fn bfs_depths(&self, root: usize) -> Vec<Option<usize>> {
        let adj = self.adjacency();
        let mut dist = vec![None; self.nodes.len()];
        let mut q = VecDeque::from([root]);
        dist[root] = Some(0);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(dist[u].unwrap() + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }

    /// Induced subgraph on `keep` (ascending ids), renumbered densely.
    pub fn induced(&self, keep: &[usize]) -> AstGraph {
        let mut map = vec![usize::MAX; self.nodes.len()];
        let mut g = AstGraph::default();
        for &k in keep {
            map[k] = g.add_node(self.nodes[k].label.clone(), self.nodes[k].depth);
        }
        for &(a, b) in &self.edges {
            if map[a] != usize::MAX && map[b] != usize::MAX {
                g.add_edge(map[a], map[b]);
            }
        }
        g
    }

    /// Sorted multiset of labels.
    pub fn label_multiset(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.nodes.iter().map(|n| n.label.as_str()).collect();
        v.sort_unstable();
        v
    }
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: usize,
    label: String,
    depth: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    nodes: Vec<NodeDoc>,
    edges: Vec<[usize; 2]>,
}

impl From<AstGraph> for GraphDoc {
    fn from(g: AstGraph) -> Self {
        GraphDoc {
            nodes: g
                .nodes
                .into_iter()
                .enumerate()
                .map(|(id, n)| NodeDoc {
                    id,
                    label: n.label,
                    depth: n.depth,
                })
                .collect(),
            edges: g.edges.into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

impl TryFrom<GraphDoc> for AstGraph {
    type Error = SchemaError;

    fn try_from(doc: GraphDoc) -> Result<Self, SchemaError> {
        let mut g = AstGraph::default();
        for (i, n) in doc.nodes.into_iter().enumerate() {
            if n.id != i {
                return Err(SchemaError(format!("node ids must be dense and ordered; found {} at position {i}", n.id)));
            }
            g.add_node(n.label, n.depth);
        }
        for [a, b] in doc.edges {
            if a >= g.node_count() || b >= g.node_count() || a == b {
                return Err(SchemaError(format!("invalid edge [{a}, {b}]")));
            }
            g.add_edge(a, b);
        }
        Ok(g)
    }
}

/// One node per tree node and one edge per parent/child pair.
pub fn ast_to_graph(tree: &AstTree) -> AstGraph {
    let mut g = AstGraph::default();
    for n in &tree.nodes {
        g.add_node(n.label.clone(), n.depth);
    }
    for n in &tree.nodes {
        for &c in &n.children {
            g.add_edge(n.id, c);
        }
    }
    g
}

/// Reads a nested `{"label": string, "children": [...]}` document into a
/// tree, numbering nodes in preorder. `children` may be omitted on leaves.
pub fn ast_from_json(doc: &Value) -> Result<AstTree, SchemaError> {
    fn go(v: &Value, depth: usize, path: &str, out: &mut AstTree) -> Result<usize, SchemaError> {
        let obj = v
            .as_object()
            .ok_or_else(|| SchemaError(format!("{path}: expected an object")))?;
        let label = obj
            .get("label")
            .and_then(Value::as_str)
            .ok_or_else(|| SchemaError(format!("{path}: missing string \"label\"")))?;
        let kids = match obj.get("children") {
            None => &[][..],
            Some(Value::Array(a)) => a.as_slice(),
            Some(_) => return Err(SchemaError(format!("{path}: \"children\" must be an array"))),
        };
        let id = out.nodes.len();
        out.nodes.push(AstNode {
            id,
            label: label.to_string(),
            depth,
            children: vec![],
        });
        let mut children = Vec::with_capacity(kids.len());
        for (k, c) in kids.iter().enumerate() {
            children.push(go(c, depth + 1, &format!("{path}.children[{k}]"), out)?);
        }
        out.nodes[id].children = children;
        Ok(id)
    }
    let mut tree = AstTree { nodes: vec![] };
    go(doc, 0, "$", &mut tree)?;
    Ok(tree)
}

/// Graph for an AST produced by an external parser.
pub fn ingest_external_ast(doc: &Value) -> Result<AstGraph, SchemaError> {
    ast_from_json(doc).map(|t| ast_to_graph(&t))
}

/// Identifier, number and string-literal tokens of a code fragment. Falls
/// back to splitting on non-word characters when the fragment does not lex.
pub fn word_tokens(src: &str) -> Vec<String> {
    match lexer::lex(src) {
        Ok(toks) => toks
            .into_iter()
            .filter(|t| matches!(t.kind, lexer::TokKind::Ident | lexer::TokKind::Int | lexer::TokKind::Str))
            .map(|t| t.text)
            .collect(),
        Err(_) => src
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect(),
    }
}

/// Source of AST graphs for preprocessing.
pub trait AstParser {
    fn parse_graph(&self, src: &str) -> Result<AstGraph, ParseError>;
}

/// The bundled mini-language parser.
#[derive(Debug, Clone, Copy, Default)]
pub struct MiniLangParser;

impl AstParser for MiniLangParser {
    fn parse_graph(&self, src: &str) -> Result<AstGraph, ParseError> {
        parse_source(src).map(|t| ast_to_graph(&t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(t: &AstTree) -> Vec<&str> {
        t.nodes.iter().map(|n| n.label.as_str()).collect()
    }

    #[test]
    fn smallest_class() {
        let t = parse_source("class A { }").unwrap();
        assert_eq!(labels(&t), vec!["ClassDecl", "A"]);
        assert_eq!(t.root().children, vec![1]);
        let g = ast_to_graph(&t);
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
    }

    #[test]
    fn binary_op_matches_hand_derivation() {
        // ClassDecl{A, MethodDecl{int, f, Block{ReturnStmt{BinaryOp{1, +, 2}}}}}
        let t = parse_source("class A { int f(){ return 1+2; } }").unwrap();
        assert_eq!(
            labels(&t),
            vec!["ClassDecl", "A", "MethodDecl", "int", "f", "Block", "ReturnStmt", "BinaryOp", "1", "+", "2"]
        );
        let bin = t.nodes.iter().find(|n| n.label == "BinaryOp").unwrap();
        let kids: Vec<_> = bin.children.iter().map(|&c| t.nodes[c].label.as_str()).collect();
        assert_eq!(kids, vec!["1", "+", "2"]);
        assert_eq!(bin.depth, 4);
    }

    #[test]
    fn mismatched_brace_is_reported() {
        let err = parse_source("class A { int f({ }").unwrap_err();
        assert_eq!((err.line, err.col), (1, 17));
        assert_eq!(err.found, "{");
        assert!(err.expected.iter().any(|e| e == ")"), "{err}");
    }

    #[test]
    fn precedence_and_postfix() {
        let t = parse_source("class A { void m(int a) { x = a.b.c(1, y) + 2 * 3 == 4; } }").unwrap();
        let g = ast_to_graph(&t);
        assert_eq!(g.edge_count(), g.node_count() - 1);
        // top of the rhs is the == comparison
        let assign = t.nodes.iter().find(|n| n.label == "Assign").unwrap();
        let rhs = &t.nodes[assign.children[1]];
        assert_eq!(rhs.label, "BinaryOp");
        assert_eq!(t.nodes[rhs.children[1]].label, "==");
        assert!(t.nodes.iter().any(|n| n.label == "MethodCall"));
        assert!(t.nodes.iter().any(|n| n.label == "FieldAccess"));
    }

    #[test]
    fn statements_and_empty_constructs() {
        let src = "class A {\n  int n = 0;\n  void m() {\n    if (n < 1) { return; } else n = n - 1;\n    while (n > 0) { }\n    String s = \"hi\";\n    print(s);\n  }\n}";
        let t = parse_source(src).unwrap();
        for l in ["FieldDecl", "IfStmt", "WhileStmt", "VarDecl", "ExprStmt", "return", "{}", "\"hi\""] {
            assert!(labels(&t).contains(&l), "missing {l}");
        }
    }

    #[test]
    fn literal_cannot_be_assigned() {
        assert!(parse_source("class A { void m() { 1 = 2; } }").is_err());
        assert!(parse_source("class A { void m() { for (;;) {} } }").is_err());
    }

    #[test]
    fn depths_agree_with_bfs() {
        let t = parse_source("class A { int f(int x){ if (x == 1) { return x; } return g(x) * 2; } }").unwrap();
        let g = ast_to_graph(&t);
        let bfs = g.bfs_depths(0);
        for (n, d) in t.nodes.iter().zip(bfs) {
            assert_eq!(Some(n.depth), d);
        }
        assert!(g.is_connected());
    }

    #[test]
    fn external_ast_schema() {
        let g = ingest_external_ast(&serde_json::json!({"label": "Root", "children": []})).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (1, 0));
        let err = ingest_external_ast(&serde_json::json!({"children": []})).unwrap_err();
        assert!(err.0.contains("label"));
        assert!(ingest_external_ast(&serde_json::json!({"label": "R", "children": 3})).is_err());
    }

    #[test]
    fn export_round_trip() {
        let t = parse_source("class A { int f(){ return a.b + 2; } }").unwrap();
        let direct = ast_to_graph(&t);
        assert_eq!(ingest_external_ast(&t.to_json()).unwrap(), direct);
        let s = serde_json::to_string(&direct).unwrap();
        assert!(s.starts_with("{\"nodes\":[{\"id\":0,\"label\":\"ClassDecl\",\"depth\":0}"));
        let back: AstGraph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, direct);
        assert!(serde_json::from_str::<AstGraph>("{\"nodes\":[{\"id\":0,\"label\":\"x\",\"depth\":0}],\"edges\":[[0,0]]}").is_err());
    }

    #[test]
    fn word_tokens_skip_punctuation() {
        assert_eq!(word_tokens("x = foo(1, \"a b\");"), vec!["x", "foo", "1", "\"a b\""]);
        assert_eq!(word_tokens("a # b"), vec!["a", "b"]);
    }

    #[test]
    fn parse_is_deterministic() {
        let src = "class A { int f(int a, int b){ return a * (b - 1); } }";
        assert_eq!(parse_source(src).unwrap(), parse_source(src).unwrap());
    }
}
