use std::collections::HashSet;

use crate::ast::{Ast, AstId, AstNode, Kind};
use crate::lexer::{tokenize, SyntaxError, TokKind, Token};

pub const COMPARE_OPS: &[&str] = &["<", "<=", ">", ">=", "==", "!=", "in"];
pub const AUG_OPS: &[&str] = &["+=", "-=", "*=", "//=", "%="];

/// Tokenizes and parses a whole module.
pub fn parse(source: &str) -> Result<Ast, SyntaxError> {
    parse_tokens(tokenize(source)?)
}

/// Graph ids are handed out in construction order: a token when it is
/// consumed, an internal node when it is complete. Leaves reuse their token's
/// id and NEWLINE tokens get none.
pub fn parse_tokens(tokens: Vec<Token>) -> Result<Ast, SyntaxError> {
    // calls to functions defined in this file get an explicit argument node
    let defs = tokens
        .windows(2)
        .filter(|w| w[0].is(TokKind::Keyword, "def") && w[1].kind == TokKind::Name)
        .map(|w| w[1].text.clone())
        .collect();
    let mut p = Parser {
        token_gid: vec![None; tokens.len()],
        tokens,
        pos: 0,
        nodes: Vec::new(),
        next_gid: 0,
        defs,
        in_function: false,
    };
    let mut body = Vec::new();
    while !p.at_end() {
        body.push(p.statement()?);
    }
    let roles = numbered("s", &body);
    let root = p.finish(Kind::Module, roles);
    Ok(Ast {
        tokens: p.tokens,
        nodes: p.nodes,
        root,
        token_gid: p.token_gid,
        num_gids: p.next_gid,
    })
}

fn numbered(prefix: &str, ids: &[AstId]) -> Vec<(String, AstId)> {
    ids.iter().enumerate().map(|(i, &c)| (format!("{prefix}{}", i + 1), c)).collect()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    nodes: Vec<AstNode>,
    token_gid: Vec<Option<usize>>,
    next_gid: usize,
    defs: HashSet<String>,
    in_function: bool,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_is(&self, kind: TokKind, text: &str) -> bool {
        self.peek().is_some_and(|t| t.is(kind, text))
    }

    fn peek_op_in(&self, ops: &[&str]) -> bool {
        self.peek()
            .is_some_and(|t| matches!(t.kind, TokKind::Op | TokKind::Keyword) && ops.contains(&t.text.as_str()))
    }

    fn error(&self, message: impl Into<String>) -> SyntaxError {
        let (line, col) = match self.peek() {
            Some(t) => (t.line, t.col),
            None => (self.tokens.last().map_or(1, |t| t.line + 1), 1),
        };
        SyntaxError {
            line,
            col,
            message: message.into(),
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of input".into(),
            Some(t) if t.kind == TokKind::Newline => "end of line".into(),
            Some(t) => format!("{:?}", t.text),
        }
    }

    fn bump(&mut self) -> usize {
        let i = self.pos;
        if self.tokens[i].kind != TokKind::Newline {
            self.token_gid[i] = Some(self.next_gid);
            self.next_gid += 1;
        }
        self.pos += 1;
        i
    }

    fn expect(&mut self, kind: TokKind, text: &str) -> PResult<usize> {
        if self.peek().is_some_and(|t| t.kind == kind && (text.is_empty() || t.text == text)) {
            Ok(self.bump())
        } else {
            let want = match kind {
                TokKind::Newline => "end of line".to_string(),
                TokKind::Indent => "an indented block".to_string(),
                TokKind::Name => "a name".to_string(),
                _ => format!("{text:?}"),
            };
            Err(self.error(format!("expected {want}, found {}", self.describe())))
        }
    }

    fn leaf(&mut self, kind: Kind) -> AstId {
        let t = self.bump();
        self.nodes.push(AstNode {
            kind,
            children: Vec::new(),
            token: Some(t),
            gid: self.token_gid[t].expect("leaf tokens are graph nodes"),
        });
        self.nodes.len() - 1
    }

    fn finish(&mut self, kind: Kind, children: Vec<(String, AstId)>) -> AstId {
        self.nodes.push(AstNode {
            kind,
            children,
            token: None,
            gid: self.next_gid,
        });
        self.next_gid += 1;
        self.nodes.len() - 1
    }

    fn statement(&mut self) -> PResult<AstId> {
        let Some(tok) = self.peek() else {
            return Err(self.error("expected a statement"));
        };
        if tok.kind == TokKind::Keyword {
            match tok.text.as_str() {
                "def" => return self.function_def(),
                "if" => return self.if_stmt(),
                "while" => return self.while_stmt(),
                "return" => return self.return_stmt(),
                _ => {}
            }
        }
        if tok.kind == TokKind::Indent {
            return Err(self.error("unexpected indent"));
        }
        self.simple_statement()
    }

    fn simple_statement(&mut self) -> PResult<AstId> {
        let target = self.expr()?;
        let stmt = if self.peek_is(TokKind::Op, "=") {
            self.require_name(target, "assign to")?;
            self.bump();
            let value = self.expr()?;
            self.finish(Kind::Assign, vec![("target".into(), target), ("value".into(), value)])
        } else if self.peek_op_in(AUG_OPS) {
            self.require_name(target, "augment")?;
            let op = self.leaf(Kind::Op);
            let value = self.expr()?;
            self.finish(
                Kind::AugAssign,
                vec![("target".into(), target), ("op".into(), op), ("value".into(), value)],
            )
        } else {
            target
        };
        self.expect(TokKind::Newline, "")?;
        Ok(stmt)
    }

    fn require_name(&self, target: AstId, what: &str) -> PResult<()> {
        if self.nodes[target].kind == Kind::Name {
            return Ok(());
        }
        let (line, col) = self.first_position(target);
        Err(SyntaxError {
            line,
            col,
            message: format!("can only {what} a plain name"),
        })
    }

    fn first_position(&self, id: AstId) -> (usize, usize) {
        let mut n = id;
        loop {
            if let Some(t) = self.nodes[n].token {
                return (self.tokens[t].line, self.tokens[t].col);
            }
            match self.nodes[n].children.first() {
                Some(&(_, c)) => n = c,
                None => return (0, 0),
            }
        }
    }

    fn suite(&mut self) -> PResult<AstId> {
        self.expect(TokKind::Op, ":")?;
        self.expect(TokKind::Newline, "")?;
        self.expect(TokKind::Indent, "")?;
        let mut body = Vec::new();
        while !self.peek_is(TokKind::Dedent, crate::lexer::DEDENT_TEXT) {
            if self.at_end() {
                return Err(self.error("unterminated block"));
            }
            body.push(self.statement()?);
        }
        self.bump();
        Ok(match body.len() {
            1 => body[0],
            _ => {
                let roles = numbered("s", &body);
                self.finish(Kind::Block, roles)
            }
        })
    }

    fn function_def(&mut self) -> PResult<AstId> {
        if self.in_function {
            return Err(self.error("nested function definitions are not supported"));
        }
        self.bump();
        if self.peek().is_none_or(|t| t.kind != TokKind::Name) {
            return Err(self.error(format!("expected a function name, found {}", self.describe())));
        }
        let name = self.leaf(Kind::Identifier);
        self.expect(TokKind::Op, "(")?;
        let mut params = Vec::new();
        if !self.peek_is(TokKind::Op, ")") {
            loop {
                if self.peek().is_none_or(|t| t.kind != TokKind::Name) {
                    return Err(self.error(format!("expected a parameter name, found {}", self.describe())));
                }
                params.push(self.leaf(Kind::Param));
                if !self.peek_is(TokKind::Op, ",") {
                    break;
                }
                self.bump();
            }
        }
        self.expect(TokKind::Op, ")")?;
        self.in_function = true;
        let body = self.suite();
        self.in_function = false;
        let body = body?;
        let mut roles = vec![("name".to_string(), name)];
        roles.extend(numbered("param", &params));
        roles.push(("body".into(), body));
        Ok(self.finish(Kind::FunctionDef, roles))
    }

    fn if_stmt(&mut self) -> PResult<AstId> {
        // `if` or `elif`
        self.bump();
        let test = self.expr()?;
        let body = self.suite()?;
        let mut roles = vec![("test".to_string(), test), ("body".to_string(), body)];
        if self.peek_is(TokKind::Keyword, "elif") {
            let orelse = self.if_stmt()?;
            roles.push(("orelse".into(), orelse));
        } else if self.peek_is(TokKind::Keyword, "else") {
            self.bump();
            let orelse = self.suite()?;
            roles.push(("orelse".into(), orelse));
        }
        Ok(self.finish(Kind::If, roles))
    }

    fn while_stmt(&mut self) -> PResult<AstId> {
        self.bump();
        let test = self.expr()?;
        let body = self.suite()?;
        Ok(self.finish(Kind::While, vec![("test".into(), test), ("body".into(), body)]))
    }

    fn return_stmt(&mut self) -> PResult<AstId> {
        if !self.in_function {
            return Err(self.error("'return' outside function"));
        }
        self.bump();
        let mut roles = Vec::new();
        if !self.peek().is_some_and(|t| t.kind == TokKind::Newline) {
            roles.push(("value".to_string(), self.expr()?));
        }
        self.expect(TokKind::Newline, "")?;
        Ok(self.finish(Kind::Return, roles))
    }

    pub fn expr(&mut self) -> PResult<AstId> {
        self.bool_chain("or", Self::and_expr)
    }

    fn and_expr(&mut self) -> PResult<AstId> {
        self.bool_chain("and", Self::not_expr)
    }

    fn bool_chain(&mut self, op: &str, next: fn(&mut Self) -> PResult<AstId>) -> PResult<AstId> {
        let mut left = next(self)?;
        while self.peek_is(TokKind::Keyword, op) {
            let o = self.leaf(Kind::Op);
            let right = next(self)?;
            left = self.finish(Kind::BoolOp, vec![("left".into(), left), ("op".into(), o), ("right".into(), right)]);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<AstId> {
        if self.peek_is(TokKind::Keyword, "not") {
            let o = self.leaf(Kind::Op);
            let operand = self.not_expr()?;
            return Ok(self.finish(Kind::UnaryOp, vec![("op".into(), o), ("operand".into(), operand)]));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<AstId> {
        let left = self.arith()?;
        if !self.peek_op_in(COMPARE_OPS) {
            return Ok(left);
        }
        let o = self.leaf(Kind::Op);
        let right = self.arith()?;
        if self.peek_op_in(COMPARE_OPS) {
            return Err(self.error("chained comparisons are not supported"));
        }
        Ok(self.finish(
            Kind::Compare,
            vec![("left".into(), left), ("op".into(), o), ("right".into(), right)],
        ))
    }

    fn binary_chain(&mut self, ops: &[&str], next: fn(&mut Self) -> PResult<AstId>) -> PResult<AstId> {
        let mut left = next(self)?;
        while self.peek().is_some_and(|t| t.kind == TokKind::Op && ops.contains(&t.text.as_str())) {
            let o = self.leaf(Kind::Op);
            let right = next(self)?;
            left = self.finish(Kind::BinOp, vec![("left".into(), left), ("op".into(), o), ("right".into(), right)]);
        }
        Ok(left)
    }

    fn arith(&mut self) -> PResult<AstId> {
        self.binary_chain(&["+", "-"], Self::term)
    }

    fn term(&mut self) -> PResult<AstId> {
        self.binary_chain(&["*", "//", "%"], Self::factor)
    }

    fn factor(&mut self) -> PResult<AstId> {
        if self.peek_is(TokKind::Op, "-") {
            let o = self.leaf(Kind::Op);
            let operand = self.factor()?;
            return Ok(self.finish(Kind::UnaryOp, vec![("op".into(), o), ("operand".into(), operand)]));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<AstId> {
        let mut e = self.atom()?;
        loop {
            if self.peek_is(TokKind::Op, ".") {
                self.bump();
                if self.peek().is_none_or(|t| t.kind != TokKind::Name) {
                    return Err(self.error(format!("expected an attribute name, found {}", self.describe())));
                }
                let attr = self.leaf(Kind::Identifier);
                e = self.finish(Kind::Attribute, vec![("value".into(), e), ("attr".into(), attr)]);
            } else if self.peek_is(TokKind::Op, "(") {
                self.bump();
                let mut args = Vec::new();
                if !self.peek_is(TokKind::Op, ")") {
                    loop {
                        args.push(self.expr()?);
                        if !self.peek_is(TokKind::Op, ",") {
                            break;
                        }
                        self.bump();
                    }
                }
                self.expect(TokKind::Op, ")")?;
                let known = self.nodes[e].kind == Kind::Name && self.defs.contains(&self.tokens[self.nodes[e].token.unwrap()].text);
                let mut roles = vec![("func".to_string(), e)];
                if known && !args.is_empty() {
                    let a = self.finish(Kind::Args, numbered("arg", &args));
                    roles.push(("args".into(), a));
                } else {
                    roles.extend(numbered("arg", &args));
                }
                e = self.finish(Kind::Call, roles);
            } else {
                return Ok(e);
            }
        }
    }

    fn atom(&mut self) -> PResult<AstId> {
        match self.peek() {
            Some(t) if t.kind == TokKind::Name => Ok(self.leaf(Kind::Name)),
            Some(t) if t.kind == TokKind::Int => Ok(self.leaf(Kind::IntLit)),
            Some(t) if t.is(TokKind::Op, "(") => {
                self.bump();
                let e = self.expr()?;
                self.expect(TokKind::Op, ")")?;
                Ok(e)
            }
            _ => Err(self.error(format!("expected an expression, found {}", self.describe()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(ast: &Ast, id: AstId) -> String {
        let n = ast.node(id);
        if n.kind.is_leaf() {
            return ast.text(id).to_string();
        }
        let parts: Vec<String> = n.children.iter().map(|(r, c)| format!("{r}={}", shape(ast, *c))).collect();
        format!("{}({})", n.kind.label(), parts.join(" "))
    }

    fn first_stmt(src: &str) -> String {
        let ast = parse(src).unwrap();
        let first = ast.children(ast.root).next().unwrap();
        shape(&ast, first)
    }

    #[test]
    fn precedence() {
        assert_eq!(
            first_stmt("a + b * c < d or not e\n"),
            "BoolOp(left=Compare(left=BinOp(left=a op=+ right=BinOp(left=b op=* right=c)) op=< right=d) op=or right=UnaryOp(op=not operand=e))"
        );
        assert_eq!(first_stmt("(a - b) - c\n"), "BinOp(left=BinOp(left=a op=- right=b) op=- right=c)");
        assert_eq!(
            first_stmt("x = -y.z(1)\n"),
            "Assign(target=x value=UnaryOp(op=- operand=Call(func=Attribute(value=y attr=z) arg1=1)))"
        );
    }

    #[test]
    fn suites_and_elif() {
        let src = "if a:\n    b = 1\nelif c:\n    b = 2\n    d = 3\nelse:\n    b -= 4\n";
        assert_eq!(
            first_stmt(src),
            "If(test=a body=Assign(target=b value=1) orelse=If(test=c body=Block(s1=Assign(target=b value=2) s2=Assign(target=d value=3)) orelse=AugAssign(target=b op=-= value=4)))"
        );
    }

    #[test]
    fn known_definitions_get_an_args_node() {
        let src = "foo(1)\nbar(1)\ndef foo(p, q):\n    return p\n";
        let ast = parse(src).unwrap();
        let stmts: Vec<_> = ast.children(ast.root).collect();
        assert_eq!(shape(&ast, stmts[0]), "Call(func=foo args=Args(arg1=1))");
        assert_eq!(shape(&ast, stmts[1]), "Call(func=bar arg1=1)");
        assert_eq!(
            shape(&ast, stmts[2]),
            "FunctionDef(name=foo param1=p param2=q body=Return(value=p))"
        );
    }

    #[test]
    fn syntax_errors() {
        let cases = [
            ("x = \n", (1, 5)),
            ("1 = x\n", (1, 1)),
            ("return 1\n", (1, 1)),
            ("if a\n    b\n", (1, 5)),
            ("a < b < c\n", (1, 7)),
            ("def f():\n    def g():\n        return 1\n", (2, 5)),
            ("if a:\nb\n", (2, 1)),
        ];
        for (src, pos) in cases {
            let e = parse(src).unwrap_err();
            assert_eq!((e.line, e.col), pos, "{src:?}: {e}");
        }
    }

    #[test]
    fn graph_ids_cover_tokens_and_internal_nodes() {
        let ast = parse("x = a + 1\n").unwrap();
        // x = a + 1 are five tokens, BinOp and Assign two internal nodes
        assert_eq!(ast.num_gids, 5 + 2 + 1);
        assert_eq!(ast.gid(ast.root), 7);
        assert_eq!(ast.token_gid.iter().flatten().count(), 5);
    }
}
