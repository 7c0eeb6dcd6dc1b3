use crate::lexer::Token;

pub type AstId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Module,
    FunctionDef,
    If,
    While,
    Assign,
    AugAssign,
    Return,
    Block,
    BinOp,
    Compare,
    BoolOp,
    UnaryOp,
    Call,
    Args,
    Attribute,
    // leaves: a leaf is the same graph node as its token
    Name,
    IntLit,
    Param,
    Identifier,
    Op,
}

impl Kind {
    pub fn is_leaf(self) -> bool {
        matches!(self, Kind::Name | Kind::IntLit | Kind::Param | Kind::Identifier | Kind::Op)
    }

    pub fn is_statement(self) -> bool {
        matches!(
            self,
            Kind::FunctionDef | Kind::If | Kind::While | Kind::Assign | Kind::AugAssign | Kind::Return
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            Kind::Module => "Module",
            Kind::FunctionDef => "FunctionDef",
            Kind::If => "If",
            Kind::While => "While",
            Kind::Assign => "Assign",
            Kind::AugAssign => "AugAssign",
            Kind::Return => "Return",
            Kind::Block => "Block",
            Kind::BinOp => "BinOp",
            Kind::Compare => "Compare",
            Kind::BoolOp => "BoolOp",
            Kind::UnaryOp => "UnaryOp",
            Kind::Call => "Call",
            Kind::Args => "Args",
            Kind::Attribute => "Attribute",
            Kind::Name => "Name",
            Kind::IntLit => "IntLit",
            Kind::Param => "Param",
            Kind::Identifier => "Identifier",
            Kind::Op => "Op",
        }
    }
}

#[derive(Clone, Debug)]
pub struct AstNode {
    pub kind: Kind,
    /// Named children in source order.
    pub children: Vec<(String, AstId)>,
    /// Token index for leaves.
    pub token: Option<usize>,
    /// Graph node id: leaves share their token's id.
    pub gid: usize,
}

/// A parsed program. Nodes live in an arena; `root` is the Module.
#[derive(Clone, Debug)]
pub struct Ast {
    pub tokens: Vec<Token>,
    pub nodes: Vec<AstNode>,
    pub root: AstId,
    /// Graph id per token; `None` for NEWLINE tokens, which are not graph nodes.
    pub token_gid: Vec<Option<usize>>,
    /// Tokens and internal AST nodes share one id space of this size.
    pub num_gids: usize,
}

impl Ast {
    pub fn node(&self, id: AstId) -> &AstNode {
        &self.nodes[id]
    }

    pub fn kind(&self, id: AstId) -> Kind {
        self.nodes[id].kind
    }

    pub fn gid(&self, id: AstId) -> usize {
        self.nodes[id].gid
    }

    pub fn child(&self, id: AstId, role: &str) -> Option<AstId> {
        self.nodes[id].children.iter().find(|(r, _)| r == role).map(|&(_, c)| c)
    }

    pub fn children(&self, id: AstId) -> impl Iterator<Item = AstId> + '_ {
        self.nodes[id].children.iter().map(|&(_, c)| c)
    }

    /// Children whose role is `prefix` followed by a number, in order.
    pub fn numbered(&self, id: AstId, prefix: &str) -> Vec<AstId> {
        self.nodes[id]
            .children
            .iter()
            .filter(|(r, _)| {
                r.strip_prefix(prefix)
                    .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
            })
            .map(|&(_, c)| c)
            .collect()
    }

    /// Source text of a leaf.
    pub fn text(&self, id: AstId) -> &str {
        match self.nodes[id].token {
            Some(t) => &self.tokens[t].text,
            None => self.nodes[id].kind.label(),
        }
    }

    pub fn token(&self, id: AstId) -> Option<&Token> {
        self.nodes[id].token.map(|t| &self.tokens[t])
    }

    /// Statements of a suite: a Block's children or the single statement.
    pub fn suite(&self, id: AstId) -> Vec<AstId> {
        match self.kind(id) {
            Kind::Block | Kind::Module => self.children(id).collect(),
            _ => vec![id],
        }
    }

    /// Preorder walk from `id`.
    pub fn preorder(&self, id: AstId) -> Vec<AstId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            let kids: Vec<_> = self.children(n).collect();
            stack.extend(kids.into_iter().rev());
        }
        out
    }

    /// Tree equality on kinds, roles and leaf text; ids and positions ignored.
    pub fn same_shape(&self, a: AstId, other: &Ast, b: AstId) -> bool {
        let (x, y) = (self.node(a), other.node(b));
        if x.kind != y.kind || x.children.len() != y.children.len() {
            return false;
        }
        if x.kind.is_leaf() && self.text(a) != other.text(b) {
            return false;
        }
        x.children
            .iter()
            .zip(&y.children)
            .all(|((ra, ca), (rb, cb))| ra == rb && self.same_shape(*ca, other, *cb))
    }
}
