use std::collections::{BTreeMap, BTreeSet, HashMap};

use heat_graph::{Hypergraph, NodeKind};

use crate::ast::{Ast, AstId, Kind};
use crate::cfg::{build_cfgs, Cfg};
use crate::dunder::{self, Context};
use crate::lexer::SyntaxError;
use crate::parser::parse;
use crate::symbols::SymbolTable;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractionConfig {
    pub chunk_len: usize,
    pub overlap: usize,
    /// One CtrlF edge per successor step instead of grouping by predecessor set.
    pub ctrlf_per_successor: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig::with_chunk_len(64)
    }
}

impl ExtractionConfig {
    pub fn with_chunk_len(chunk_len: usize) -> Self {
        ExtractionConfig {
            chunk_len,
            overlap: chunk_len / 4,
            ctrlf_per_successor: false,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.overlap == 0 || self.overlap >= self.chunk_len {
            return Err(format!(
                "chunk overlap must satisfy 0 < overlap < chunk length (got {} and {})",
                self.overlap, self.chunk_len
            ));
        }
        Ok(())
    }
}

/// A relation before it is placed in a graph: type plus `(qualifier, node)` pairs.
pub type Relation = (String, Vec<(String, usize)>);

/// Everything derived from one source file.
#[derive(Clone, Debug)]
pub struct Program {
    pub source: String,
    pub ast: Ast,
    pub symbols: SymbolTable,
    pub cfgs: Vec<Cfg>,
    /// Graph node of each symbol, indexed by symbol id.
    pub symbol_nodes: Vec<usize>,
    pub graph: Hypergraph,
}

pub fn extract(source: &str, config: &ExtractionConfig) -> Result<Hypergraph, SyntaxError> {
    analyze(source, config).map(|p| p.graph)
}

pub fn analyze(source: &str, config: &ExtractionConfig) -> Result<Program, SyntaxError> {
    let ast = parse(source)?;
    let symbols = SymbolTable::resolve(&ast);
    let cfgs = build_cfgs(&ast);

    let mut graph = Hypergraph::new();
    let mut table: Vec<Option<(String, NodeKind)>> = vec![None; ast.num_gids];
    for (t, gid) in ast.token_gid.iter().enumerate() {
        if let Some(g) = gid {
            table[*g] = Some((ast.tokens[t].text.clone(), NodeKind::Token));
        }
    }
    for n in &ast.nodes {
        if !n.kind.is_leaf() {
            table[n.gid] = Some((n.kind.label().to_string(), NodeKind::AstNode));
        }
    }
    for entry in table {
        let (label, kind) = entry.expect("graph ids are dense");
        graph.add_node(label, kind);
    }
    let symbol_nodes: Vec<usize> = symbols
        .symbols
        .iter()
        .map(|s| graph.add_node(s.name.clone(), NodeKind::Symbol))
        .collect();

    let relations = [
        token_relations(&ast, config),
        ast_relations(&ast),
        call_relations(&ast),
        desugar_operators(&ast),
        control_flow_relations(&ast, &cfgs, config.ctrlf_per_successor),
        dataflow_relations(&ast, &cfgs, &symbols),
        symbol_relations(&ast, &cfgs, &symbols, &symbol_nodes),
        returns_relations(&ast),
    ];
    for (ty, incidences) in relations.into_iter().flatten() {
        graph.add_edge(ty, incidences);
    }
    Ok(Program {
        source: source.to_string(),
        ast,
        symbols,
        cfgs,
        symbol_nodes,
        graph,
    })
}

/// Half-open token ranges of each chunk.
pub fn chunk_ranges(n: usize, chunk_len: usize, overlap: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let step = chunk_len - overlap;
    let mut start = 0;
    while start < n {
        let end = (start + chunk_len).min(n);
        out.push((start, end));
        if end == n {
            break;
        }
        start += step;
    }
    out
}

/// One `Tokens` edge per chunk; positions restart at `p1` in each chunk.
pub fn token_relations(ast: &Ast, config: &ExtractionConfig) -> Vec<Relation> {
    let toks: Vec<usize> = ast.token_gid.iter().flatten().copied().collect();
    chunk_ranges(toks.len(), config.chunk_len, config.overlap)
        .into_iter()
        .map(|(a, b)| {
            let inc = toks[a..b].iter().enumerate().map(|(i, &g)| (format!("p{}", i + 1), g)).collect();
            ("Tokens".to_string(), inc)
        })
        .collect()
}

fn by_gid(ast: &Ast) -> Vec<AstId> {
    let mut ids: Vec<AstId> = (0..ast.nodes.len()).collect();
    ids.sort_by_key(|&i| ast.gid(i));
    ids
}

pub fn ast_relations(ast: &Ast) -> Vec<Relation> {
    by_gid(ast)
        .into_iter()
        .filter(|&n| !ast.kind(n).is_leaf())
        .map(|n| {
            let mut inc = vec![("node".to_string(), ast.gid(n))];
            inc.extend(ast.node(n).children.iter().map(|(r, c)| (r.clone(), ast.gid(*c))));
            ("AstNode".to_string(), inc)
        })
        .collect()
}

/// Calls become relations named after the callee. Arguments of in-file
/// functions are qualified by parameter name; other callees get `arg1..`,
/// and method calls add the receiver as `self`.
pub fn call_relations(ast: &Ast) -> Vec<Relation> {
    let defs: HashMap<&str, Vec<&str>> = ast
        .suite(ast.root)
        .into_iter()
        .filter(|&s| ast.kind(s) == Kind::FunctionDef)
        .map(|s| {
            let name = ast.text(ast.child(s, "name").unwrap());
            let params = ast.numbered(s, "param").into_iter().map(|p| ast.text(p)).collect();
            (name, params)
        })
        .collect();
    let mut out = Vec::new();
    for n in by_gid(ast) {
        if ast.kind(n) != Kind::Call {
            continue;
        }
        let func = ast.child(n, "func").unwrap();
        let args = match ast.child(n, "args") {
            Some(a) => ast.numbered(a, "arg"),
            None => ast.numbered(n, "arg"),
        };
        let mut inc = vec![("rval".to_string(), ast.gid(n))];
        let (name, params) = match ast.kind(func) {
            Kind::Name => {
                let name = ast.text(func);
                (name.to_string(), defs.get(name).cloned().unwrap_or_default())
            }
            Kind::Attribute => {
                inc.push(("self".into(), ast.gid(ast.child(func, "value").unwrap())));
                (ast.text(ast.child(func, "attr").unwrap()).to_string(), Vec::new())
            }
            // calling a computed value: no name to relate by
            _ => continue,
        };
        for (i, a) in args.into_iter().enumerate() {
            let q = params.get(i).map_or_else(|| format!("arg{}", i + 1), |p| p.to_string());
            inc.push((q, ast.gid(a)));
        }
        out.push((name, inc));
    }
    out
}

/// Operators and attribute access as data-model method relations.
pub fn desugar_operators(ast: &Ast) -> Vec<Relation> {
    let mut out = Vec::new();
    for n in by_gid(ast) {
        let c = |role| ast.child(n, role).unwrap();
        let (context, operator, left, right) = match ast.kind(n) {
            Kind::BinOp => (Context::Binary, ast.text(c("op")), c("left"), Some(c("right"))),
            Kind::Compare => (Context::Compare, ast.text(c("op")), c("left"), Some(c("right"))),
            Kind::AugAssign => (Context::Augmented, ast.text(c("op")), c("target"), Some(c("value"))),
            Kind::UnaryOp => (Context::Unary, ast.text(c("op")), c("operand"), None),
            Kind::Attribute => (Context::Attribute, ".", c("value"), Some(c("attr"))),
            _ => continue,
        };
        let Some(entry) = dunder::lookup(context, operator) else {
            continue;
        };
        let mut inc = Vec::new();
        if context == Context::Attribute {
            inc.push(("rval".to_string(), ast.gid(n)));
        }
        inc.push((entry.left.clone(), ast.gid(left)));
        if let (Some(role), Some(r)) = (&entry.right, right) {
            inc.push((role.clone(), ast.gid(r)));
        }
        out.push((entry.relation.clone(), inc));
    }
    out
}

fn grouped(rel: &str, groups: BTreeMap<(usize, BTreeSet<usize>), BTreeSet<usize>>, prev: &str, succ: &str) -> Vec<Relation> {
    let mut rels: Vec<(usize, Relation)> = groups
        .into_iter()
        .map(|((_, prevs), succs)| {
            let first = *succs.iter().next().unwrap();
            let mut inc: Vec<(String, usize)> = prevs.into_iter().map(|p| (prev.to_string(), p)).collect();
            inc.extend(succs.into_iter().map(|s| (succ.to_string(), s)));
            (first, (rel.to_string(), inc))
        })
        .collect();
    rels.sort_by_key(|(first, _)| *first);
    rels.into_iter().map(|(_, r)| r).collect()
}

/// Steps with identical predecessor sets share one `CtrlF` edge.
pub fn control_flow_relations(ast: &Ast, cfgs: &[Cfg], per_successor: bool) -> Vec<Relation> {
    let mut groups = BTreeMap::new();
    for cfg in cfgs {
        for (step, preds) in cfg.step_predecessors() {
            if preds.is_empty() {
                continue;
            }
            let succ = ast.gid(cfg.node(step));
            let prevs: BTreeSet<usize> = preds.iter().map(|&p| ast.gid(cfg.node(p))).collect();
            let key = if per_successor { succ } else { 0 };
            groups.entry((key, prevs)).or_insert_with(BTreeSet::new).insert(succ);
        }
    }
    grouped("CtrlF", groups, "prev", "succ")
}

/// `MayRead` / `MayWrite`: occurrences sharing the same set of possible
/// previous reads (writes) of their symbol share one edge.
pub fn dataflow_relations(ast: &Ast, cfgs: &[Cfg], symbols: &SymbolTable) -> Vec<Relation> {
    let mut out = Vec::new();
    for (rel, reads) in [("MayRead", true), ("MayWrite", false)] {
        let mut groups = BTreeMap::new();
        for cfg in cfgs {
            for (occ, prevs) in cfg.may_previous(symbols, reads) {
                if prevs.is_empty() {
                    continue;
                }
                let node = cfg.node(occ);
                let sym = symbols.symbol_of(node).unwrap();
                let prevs: BTreeSet<usize> = prevs.iter().map(|&p| ast.gid(cfg.node(p))).collect();
                groups.entry((sym, prevs)).or_insert_with(BTreeSet::new).insert(ast.gid(node));
            }
        }
        out.extend(grouped(rel, groups, "prev", "succ"));
    }
    out
}

/// `Symbol(sym, occ.., may_last_use..)`; a last use is listed only under
/// `may_last_use`.
pub fn symbol_relations(ast: &Ast, cfgs: &[Cfg], symbols: &SymbolTable, symbol_nodes: &[usize]) -> Vec<Relation> {
    let mut last: BTreeSet<AstId> = BTreeSet::new();
    for cfg in cfgs {
        last.extend(cfg.may_last_use(symbols).into_iter().map(|e| cfg.node(e)));
    }
    symbols
        .symbols
        .iter()
        .zip(symbol_nodes)
        .map(|(s, &node)| {
            let mut occ: Vec<usize> = s.occurrences.iter().map(|&o| ast.gid(o)).collect();
            occ.sort_unstable();
            let mut inc = vec![("sym".to_string(), node)];
            let lasts: BTreeSet<usize> = s.occurrences.iter().filter(|o| last.contains(o)).map(|&o| ast.gid(o)).collect();
            inc.extend(occ.iter().filter(|g| !lasts.contains(g)).map(|&g| ("occ".to_string(), g)));
            inc.extend(lasts.into_iter().map(|g| ("may_last_use".to_string(), g)));
            ("Symbol".to_string(), inc)
        })
        .collect()
}

pub fn returns_relations(ast: &Ast) -> Vec<Relation> {
    ast.suite(ast.root)
        .into_iter()
        .filter(|&s| ast.kind(s) == Kind::FunctionDef)
        .filter_map(|f| {
            let mut returns: Vec<usize> = ast
                .preorder(f)
                .into_iter()
                .filter(|&n| ast.kind(n) == Kind::Return)
                .map(|n| ast.gid(n))
                .collect();
            if returns.is_empty() {
                return None;
            }
            returns.sort_unstable();
            let mut inc = vec![("fn".to_string(), ast.gid(f))];
            inc.extend(returns.into_iter().map(|r| ("from".to_string(), r)));
            Some(("Returns".to_string(), inc))
        })
        .collect()
}
