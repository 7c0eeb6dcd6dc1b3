//! All-paths dataflow oracle for loop-free programs.
//!
//! Enumerates every execution path of each scope directly on the AST and
//! reads previous uses and last uses off the linear event sequences.

use std::collections::{BTreeMap, BTreeSet};

use heat_code::ast::{Ast, AstId, Kind};
use heat_code::symbols::SymbolTable;

#[derive(Clone, Copy, Debug)]
enum Ev {
    Read(AstId),
    Write(AstId),
    Both(AstId),
}

impl Ev {
    fn node(self) -> AstId {
        match self {
            Ev::Read(n) | Ev::Write(n) | Ev::Both(n) => n,
        }
    }
    fn reads(self) -> bool {
        matches!(self, Ev::Read(_) | Ev::Both(_))
    }
    fn writes(self) -> bool {
        matches!(self, Ev::Write(_) | Ev::Both(_))
    }
}

#[derive(Clone)]
struct Path {
    events: Vec<Ev>,
    returned: bool,
}

fn then(paths: Vec<Path>, mut next: impl FnMut() -> Vec<Path>) -> Vec<Path> {
    let mut out = Vec::new();
    for p in paths {
        if p.returned {
            out.push(p);
            continue;
        }
        for q in next() {
            let mut events = p.events.clone();
            events.extend(q.events);
            out.push(Path {
                events,
                returned: q.returned,
            });
        }
    }
    out
}

fn single(events: Vec<Ev>) -> Vec<Path> {
    vec![Path { events, returned: false }]
}

fn expr(ast: &Ast, id: AstId) -> Vec<Path> {
    let c = |r| ast.child(id, r).unwrap();
    match ast.kind(id) {
        Kind::Name => single(vec![Ev::Read(id)]),
        Kind::IntLit => single(vec![]),
        Kind::BinOp | Kind::Compare => then(expr(ast, c("left")), || expr(ast, c("right"))),
        Kind::BoolOp => then(expr(ast, c("left")), || {
            let mut alts = expr(ast, c("right"));
            alts.push(Path {
                events: vec![],
                returned: false,
            });
            alts
        }),
        Kind::UnaryOp => expr(ast, c("operand")),
        Kind::Attribute => expr(ast, c("value")),
        Kind::Call => {
            let args = match ast.child(id, "args") {
                Some(a) => ast.numbered(a, "arg"),
                None => ast.numbered(id, "arg"),
            };
            let mut paths = expr(ast, c("func"));
            for a in args {
                paths = then(paths, || expr(ast, a));
            }
            paths
        }
        k => panic!("{k:?}"),
    }
}

fn stmts(ast: &Ast, list: &[AstId], start: Vec<Path>) -> Vec<Path> {
    let mut paths = start;
    for &s in list {
        paths = then(paths, || stmt(ast, s));
    }
    paths
}

fn stmt(ast: &Ast, id: AstId) -> Vec<Path> {
    let c = |r| ast.child(id, r).unwrap();
    match ast.kind(id) {
        Kind::Assign => then(expr(ast, c("value")), || single(vec![Ev::Write(c("target"))])),
        Kind::AugAssign => then(expr(ast, c("value")), || single(vec![Ev::Both(c("target"))])),
        Kind::Return => {
            let mut p = match ast.child(id, "value") {
                Some(v) => expr(ast, v),
                None => single(vec![]),
            };
            for x in &mut p {
                x.returned = true;
            }
            p
        }
        Kind::If => then(expr(ast, c("test")), || {
            let mut alts = stmts(ast, &ast.suite(c("body")), single(vec![]));
            match ast.child(id, "orelse") {
                Some(o) => alts.extend(stmts(ast, &ast.suite(o), single(vec![]))),
                None => alts.push(Path {
                    events: vec![],
                    returned: false,
                }),
            }
            alts
        }),
        Kind::FunctionDef => single(vec![]),
        Kind::While => panic!("oracle handles loop-free programs only"),
        _ => expr(ast, id),
    }
}

fn scope_paths(ast: &Ast) -> Vec<Vec<Path>> {
    let top = ast.suite(ast.root);
    let mut out = vec![stmts(ast, &top, single(vec![]))];
    for &f in &top {
        if ast.kind(f) == Kind::FunctionDef {
            let params = ast.numbered(f, "param").into_iter().map(Ev::Write).collect();
            out.push(stmts(ast, &ast.suite(ast.child(f, "body").unwrap()), single(params)));
        }
    }
    out
}

pub type Edge = (String, Vec<(String, usize)>);

pub struct Expected {
    /// MayRead and MayWrite edges as sorted multisets.
    pub dataflow: BTreeSet<Edge>,
    /// Graph ids of every may-last-use occurrence.
    pub last_uses: BTreeSet<usize>,
}

pub fn expected(ast: &Ast, syms: &SymbolTable) -> Expected {
    let sym = |n: AstId| syms.symbol_of(n).unwrap();
    let mut prev: [BTreeMap<AstId, BTreeSet<AstId>>; 2] = Default::default();
    let mut last_uses = BTreeSet::new();
    for paths in scope_paths(ast) {
        for p in paths {
            let ev = &p.events;
            for i in 0..ev.len() {
                let s = sym(ev[i].node());
                for (slot, want_read) in [(0, true), (1, false)] {
                    let found = (0..i)
                        .rev()
                        .find(|&j| sym(ev[j].node()) == s && if want_read { ev[j].reads() } else { ev[j].writes() });
                    if let Some(j) = found {
                        prev[slot].entry(ev[i].node()).or_default().insert(ev[j].node());
                    }
                }
                if !ev[i + 1..].iter().any(|e| sym(e.node()) == s) {
                    last_uses.insert(ast.gid(ev[i].node()));
                }
            }
        }
    }
    let mut dataflow = BTreeSet::new();
    for (slot, rel) in [(0, "MayRead"), (1, "MayWrite")] {
        let mut groups: BTreeMap<(usize, BTreeSet<usize>), Vec<usize>> = BTreeMap::new();
        for (occ, prevs) in &prev[slot] {
            let key = (sym(*occ), prevs.iter().map(|&p| ast.gid(p)).collect());
            groups.entry(key).or_default().push(ast.gid(*occ));
        }
        for ((_, prevs), succs) in groups {
            let mut inc: Vec<(String, usize)> = prevs.into_iter().map(|p| ("prev".to_string(), p)).collect();
            inc.extend(succs.into_iter().map(|s| ("succ".to_string(), s)));
            inc.sort();
            dataflow.insert((rel.to_string(), inc));
        }
    }
    Expected { dataflow, last_uses }
}

/// The same two views read off an extracted graph.
pub fn actual(g: &heat_graph::Hypergraph) -> Expected {
    let dataflow = g
        .edges
        .iter()
        .filter(|e| e.edge_type == "MayRead" || e.edge_type == "MayWrite")
        .map(|e| {
            let mut inc: Vec<(String, usize)> = e.incidences.iter().map(|i| (i.qualifier.clone(), i.node)).collect();
            inc.sort();
            (e.edge_type.clone(), inc)
        })
        .collect();
    let last_uses = g
        .edges_of_type("Symbol")
        .flat_map(|e| e.incidences.iter())
        .filter(|i| i.qualifier == "may_last_use")
        .map(|i| i.node)
        .collect();
    Expected { dataflow, last_uses }
}
