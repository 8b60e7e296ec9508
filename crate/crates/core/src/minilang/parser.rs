use super::lexer::{lex, TokKind, Token};
use super::{AstTree, ParseError};

const KEYWORDS: [&str; 5] = ["class", "if", "else", "while", "return"];

/// Builder node before preorder numbering.
struct Node {
    label: String,
    children: Vec<Node>,
}

fn leaf(label: impl Into<String>) -> Node {
    Node {
        label: label.into(),
        children: vec![],
    }
}

fn node(label: &str, children: Vec<Node>) -> Node {
    Node {
        label: label.into(),
        children,
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Token {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)]
    }

    fn is_sym(&self, s: &str) -> bool {
        let t = self.peek();
        t.kind == TokKind::Sym && t.text == s
    }

    fn is_kw(&self, s: &str) -> bool {
        let t = self.peek();
        t.kind == TokKind::Ident && t.text == s
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.kind != TokKind::Eof {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let t = self.peek();
        let found = if t.kind == TokKind::Eof { "end of input" } else { t.text.as_str() };
        ParseError::new(t.line, t.col, expected.iter().map(|s| s.to_string()).collect(), found)
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.is_sym(s) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[s]))
        }
    }

    fn expect_kw(&mut self, s: &str) -> PResult<()> {
        if self.is_kw(s) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[s]))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        let t = self.peek();
        if t.kind == TokKind::Ident && !KEYWORDS.contains(&t.text.as_str()) {
            Ok(self.bump().text)
        } else {
            Err(self.error(&[what]))
        }
    }

    fn program(&mut self) -> PResult<Node> {
        let mut classes = vec![self.class_decl()?];
        while self.is_kw("class") {
            classes.push(self.class_decl()?);
        }
        if self.peek().kind != TokKind::Eof {
            return Err(self.error(&["class", "end of input"]));
        }
        Ok(if classes.len() == 1 {
            classes.pop().unwrap()
        } else {
            node("CompilationUnit", classes)
        })
    }

    fn class_decl(&mut self) -> PResult<Node> {
        self.expect_kw("class")?;
        let name = self.ident("class name")?;
        self.expect_sym("{")?;
        let mut children = vec![leaf(name)];
        while !self.is_sym("}") {
            if self.peek().kind == TokKind::Eof {
                return Err(self.error(&["}", "member declaration"]));
            }
            children.push(self.member()?);
        }
        self.bump();
        Ok(node("ClassDecl", children))
    }

    /// A type: identifier with optional `[]` suffixes, kept as one leaf.
    fn type_name(&mut self) -> PResult<String> {
        let mut t = self.ident("type")?;
        while self.is_sym("[") {
            self.bump();
            self.expect_sym("]")?;
            t.push_str("[]");
        }
        Ok(t)
    }

    fn member(&mut self) -> PResult<Node> {
        let ty = self.type_name()?;
        let name = self.ident("member name")?;
        if self.is_sym("(") {
            self.bump();
            let mut children = vec![leaf(ty), leaf(name)];
            if !self.is_sym(")") {
                loop {
                    let pt = self.type_name().map_err(|_| self.error(&["parameter type", ")"]))?;
                    let pn = self.ident("parameter name")?;
                    children.push(node("Param", vec![leaf(pt), leaf(pn)]));
                    if self.is_sym(",") {
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
            self.expect_sym(")")?;
            children.push(self.block()?);
            Ok(node("MethodDecl", children))
        } else {
            let mut children = vec![leaf(ty), leaf(name)];
            if self.is_sym("=") {
                self.bump();
                children.push(self.expr()?);
            }
            self.expect_sym(";")?;
            Ok(node("FieldDecl", children))
        }
    }

    fn block(&mut self) -> PResult<Node> {
        self.expect_sym("{")?;
        let mut stmts = Vec::new();
        while !self.is_sym("}") {
            if self.peek().kind == TokKind::Eof {
                return Err(self.error(&["}", "statement"]));
            }
            stmts.push(self.stmt()?);
        }
        self.bump();
        Ok(if stmts.is_empty() { leaf("{}") } else { node("Block", stmts) })
    }

    /// `IDENT ([])* IDENT` starts a local variable declaration.
    fn at_var_decl(&self) -> bool {
        let t = self.peek();
        if t.kind != TokKind::Ident || KEYWORDS.contains(&t.text.as_str()) {
            return false;
        }
        let mut k = 1;
        while self.peek_at(k).text == "[" && self.peek_at(k + 1).text == "]" {
            k += 2;
        }
        let n = self.peek_at(k);
        n.kind == TokKind::Ident && !KEYWORDS.contains(&n.text.as_str())
    }

    fn stmt(&mut self) -> PResult<Node> {
        if self.is_sym("{") {
            return self.block();
        }
        if self.is_kw("if") {
            self.bump();
            self.expect_sym("(")?;
            let cond = self.expr()?;
            self.expect_sym(")")?;
            let mut children = vec![cond, self.stmt()?];
            if self.is_kw("else") {
                self.bump();
                children.push(self.stmt()?);
            }
            return Ok(node("IfStmt", children));
        }
        if self.is_kw("while") {
            self.bump();
            self.expect_sym("(")?;
            let cond = self.expr()?;
            self.expect_sym(")")?;
            let body = self.stmt()?;
            return Ok(node("WhileStmt", vec![cond, body]));
        }
        if self.is_kw("return") {
            self.bump();
            if self.is_sym(";") {
                self.bump();
                return Ok(leaf("return"));
            }
            let e = self.expr()?;
            self.expect_sym(";")?;
            return Ok(node("ReturnStmt", vec![e]));
        }
        if self.at_var_decl() {
            let ty = self.type_name()?;
            let name = self.ident("variable name")?;
            let mut children = vec![leaf(ty), leaf(name)];
            if self.is_sym("=") {
                self.bump();
                children.push(self.expr()?);
            }
            self.expect_sym(";")?;
            return Ok(node("VarDecl", children));
        }
        let e = self.expr()?;
        if self.is_sym("=") {
            let assignable = e.children.is_empty() && !e.label.starts_with(|c: char| c.is_ascii_digit() || c == '"')
                || e.label == "FieldAccess";
            if !assignable {
                return Err(self.error(&[";"]));
            }
            self.bump();
            let rhs = self.expr()?;
            self.expect_sym(";")?;
            return Ok(node("Assign", vec![e, rhs]));
        }
        self.expect_sym(";")?;
        Ok(node("ExprStmt", vec![e]))
    }

    fn expr(&mut self) -> PResult<Node> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> PResult<Node> {
        const LEVELS: [&[&str]; 4] = [&["==", "!="], &["<", ">"], &["+", "-"], &["*", "/"]];
        if level == LEVELS.len() {
            return self.postfix();
        }
        let mut lhs = self.binary(level + 1)?;
        while LEVELS[level].iter().any(|op| self.is_sym(op)) {
            let op = self.bump().text;
            let rhs = self.binary(level + 1)?;
            lhs = node("BinaryOp", vec![lhs, leaf(op), rhs]);
        }
        Ok(lhs)
    }

    fn args(&mut self) -> PResult<Vec<Node>> {
        self.expect_sym("(")?;
        let mut out = Vec::new();
        if !self.is_sym(")") {
            loop {
                out.push(self.expr()?);
                if self.is_sym(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        Ok(out)
    }

    fn postfix(&mut self) -> PResult<Node> {
        let mut e = self.primary()?;
        loop {
            if self.is_sym(".") {
                self.bump();
                let name = self.ident("member name")?;
                if self.is_sym("(") {
                    let mut children = vec![e, leaf(name)];
                    children.extend(self.args()?);
                    e = node("MethodCall", children);
                } else {
                    e = node("FieldAccess", vec![e, leaf(name)]);
                }
            } else if self.is_sym("(") && e.children.is_empty() && self.toks[self.pos - 1].kind == TokKind::Ident {
                let mut children = vec![e];
                children.extend(self.args()?);
                e = node("MethodCall", children);
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> PResult<Node> {
        let t = self.peek().clone();
        match t.kind {
            TokKind::Int | TokKind::Str => Ok(leaf(self.bump().text)),
            TokKind::Ident if !KEYWORDS.contains(&t.text.as_str()) => Ok(leaf(self.bump().text)),
            TokKind::Sym if t.text == "(" => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            _ => Err(self.error(&["expression"])),
        }
    }
}

fn number(n: Node, depth: usize, out: &mut AstTree) -> usize {
    let id = out.nodes.len();
    out.nodes.push(super::AstNode {
        id,
        label: n.label,
        depth,
        children: vec![],
    });
    let kids: Vec<usize> = n.children.into_iter().map(|c| number(c, depth + 1, out)).collect();
    out.nodes[id].children = kids;
    id
}

/// Parses a mini-language program. Node ids are assigned in preorder, so
/// the root is node 0.
pub fn parse_source(src: &str) -> Result<AstTree, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let root = p.program()?;
    let mut tree = AstTree { nodes: vec![] };
    number(root, 0, &mut tree);
    Ok(tree)
}
