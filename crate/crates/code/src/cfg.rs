//! Per-scope control-flow graphs at expression granularity.
//!
//! Events are name reads and writes plus *steps*: computing expressions
//! (calls, attribute loads, operators) in evaluation order, every augmented
//! assignment, and an anchor for statements that otherwise compute nothing.
//! `and`/`or` short-circuit. Loops get a back edge to the first event of
//! their test.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::{Ast, AstId, Kind};
use crate::symbols::{SymId, SymbolTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Entry,
    Exit,
    Step,
    Read,
    Write,
    /// Augmented-assignment target: read and written by one occurrence.
    ReadWrite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub kind: EventKind,
    pub node: Option<AstId>,
}

impl Event {
    pub fn reads(&self) -> bool {
        matches!(self.kind, EventKind::Read | EventKind::ReadWrite)
    }

    pub fn writes(&self) -> bool {
        matches!(self.kind, EventKind::Write | EventKind::ReadWrite)
    }

    pub fn is_occurrence(&self) -> bool {
        self.reads() || self.writes()
    }
}

pub const ENTRY: usize = 0;
pub const EXIT: usize = 1;

#[derive(Clone, Debug)]
pub struct Cfg {
    /// `None` for module-level code.
    pub function: Option<AstId>,
    pub events: Vec<Event>,
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
    pub reachable: Vec<bool>,
}

/// The module graph first, then one per function in definition order.
pub fn build_cfgs(ast: &Ast) -> Vec<Cfg> {
    let mut out = Vec::new();
    let mut b = Builder::new(ast, None);
    let stmts = ast.suite(ast.root);
    for &s in &stmts {
        b.stmt(s);
    }
    out.push(b.finish());
    for &s in &stmts {
        if ast.kind(s) == Kind::FunctionDef {
            let mut b = Builder::new(ast, Some(s));
            for p in ast.numbered(s, "param") {
                b.emit(EventKind::Write, p);
            }
            b.suite(ast.child(s, "body").unwrap());
            out.push(b.finish());
        }
    }
    out
}

struct Builder<'a> {
    ast: &'a Ast,
    function: Option<AstId>,
    events: Vec<Event>,
    edges: Vec<(usize, usize)>,
    frontier: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn new(ast: &'a Ast, function: Option<AstId>) -> Self {
        Builder {
            ast,
            function,
            events: vec![
                Event {
                    kind: EventKind::Entry,
                    node: None,
                },
                Event {
                    kind: EventKind::Exit,
                    node: None,
                },
            ],
            edges: Vec::new(),
            frontier: vec![ENTRY],
        }
    }

    fn emit(&mut self, kind: EventKind, node: AstId) -> usize {
        let id = self.events.len();
        self.events.push(Event { kind, node: Some(node) });
        for &f in &self.frontier {
            self.edges.push((f, id));
        }
        self.frontier = vec![id];
        id
    }

    fn jump_to_exit(&mut self) {
        for f in std::mem::take(&mut self.frontier) {
            self.edges.push((f, EXIT));
        }
    }

    fn finish(mut self) -> Cfg {
        self.jump_to_exit();
        let n = self.events.len();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        self.edges.sort_unstable();
        self.edges.dedup();
        for &(a, b) in &self.edges {
            succ[a].push(b);
            pred[b].push(a);
        }
        let mut reachable = vec![false; n];
        let mut stack = vec![ENTRY];
        while let Some(e) = stack.pop() {
            if !std::mem::replace(&mut reachable[e], true) {
                stack.extend(&succ[e]);
            }
        }
        Cfg {
            function: self.function,
            events: self.events,
            succ,
            pred,
            reachable,
        }
    }

    fn suite(&mut self, id: AstId) {
        for s in self.ast.suite(id) {
            self.stmt(s);
        }
    }

    /// Evaluates an expression; true if it emitted a step.
    fn expr(&mut self, id: AstId) -> bool {
        let ast = self.ast;
        match ast.kind(id) {
            Kind::Name => {
                self.emit(EventKind::Read, id);
                false
            }
            Kind::IntLit => false,
            Kind::BinOp | Kind::Compare => {
                self.expr(ast.child(id, "left").unwrap());
                self.expr(ast.child(id, "right").unwrap());
                self.emit(EventKind::Step, id);
                true
            }
            Kind::BoolOp => {
                self.expr(ast.child(id, "left").unwrap());
                let short = self.frontier.clone();
                self.expr(ast.child(id, "right").unwrap());
                self.frontier.extend(short);
                self.emit(EventKind::Step, id);
                true
            }
            Kind::UnaryOp => {
                self.expr(ast.child(id, "operand").unwrap());
                self.emit(EventKind::Step, id);
                true
            }
            Kind::Attribute => {
                self.expr(ast.child(id, "value").unwrap());
                self.emit(EventKind::Step, id);
                true
            }
            Kind::Call => {
                self.expr(ast.child(id, "func").unwrap());
                let args = match ast.child(id, "args") {
                    Some(a) => ast.numbered(a, "arg"),
                    None => ast.numbered(id, "arg"),
                };
                for a in args {
                    self.expr(a);
                }
                self.emit(EventKind::Step, id);
                true
            }
            other => unreachable!("{other:?} is not an expression"),
        }
    }

    fn anchored(&mut self, expr: AstId, anchor: AstId) {
        if !self.expr(expr) {
            self.emit(EventKind::Step, anchor);
        }
    }

    fn stmt(&mut self, id: AstId) {
        let ast = self.ast;
        let c = |role| ast.child(id, role).unwrap();
        match ast.kind(id) {
            Kind::Assign => {
                let stepped = self.expr(c("value"));
                self.emit(EventKind::Write, c("target"));
                if !stepped {
                    self.emit(EventKind::Step, id);
                }
            }
            Kind::AugAssign => {
                self.expr(c("value"));
                self.emit(EventKind::ReadWrite, c("target"));
                self.emit(EventKind::Step, id);
            }
            Kind::Return => {
                match ast.child(id, "value") {
                    Some(v) => self.anchored(v, id),
                    None => {
                        self.emit(EventKind::Step, id);
                    }
                }
                self.jump_to_exit();
            }
            Kind::If => {
                self.anchored(c("test"), id);
                let after_test = self.frontier.clone();
                self.suite(c("body"));
                let after_body = std::mem::replace(&mut self.frontier, after_test);
                if let Some(orelse) = ast.child(id, "orelse") {
                    self.suite(orelse);
                }
                self.frontier.extend(after_body);
            }
            Kind::While => {
                let head = self.events.len();
                self.anchored(c("test"), id);
                let after_test = self.frontier.clone();
                self.suite(c("body"));
                for f in std::mem::replace(&mut self.frontier, after_test) {
                    self.edges.push((f, head));
                }
            }
            Kind::FunctionDef => {
                self.emit(EventKind::Step, id);
            }
            _ => self.anchored(id, id),
        }
    }
}

impl Cfg {
    pub fn node(&self, event: usize) -> AstId {
        self.events[event].node.expect("entry and exit carry no node")
    }

    pub fn steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.events.len()).filter(|&e| self.reachable[e] && self.events[e].kind == EventKind::Step)
    }

    /// Nearest preceding steps of each reachable step, looking back through
    /// reads and writes.
    pub fn step_predecessors(&self) -> Vec<(usize, BTreeSet<usize>)> {
        self.steps()
            .map(|s| {
                let mut found = BTreeSet::new();
                let mut seen = vec![false; self.events.len()];
                let mut stack: Vec<usize> = self.pred[s].clone();
                while let Some(p) = stack.pop() {
                    if std::mem::replace(&mut seen[p], true) || !self.reachable[p] {
                        continue;
                    }
                    match self.events[p].kind {
                        EventKind::Step => {
                            found.insert(p);
                        }
                        EventKind::Entry => {}
                        _ => stack.extend(&self.pred[p]),
                    }
                }
                (s, found)
            })
            .collect()
    }

    /// For each reachable occurrence, the occurrences of the same symbol that
    /// were the most recent read (or write) on some path reaching it.
    pub fn may_previous(&self, syms: &SymbolTable, reads: bool) -> BTreeMap<usize, BTreeSet<usize>> {
        let n = self.events.len();
        let sym = |e: usize| self.events[e].node.and_then(|a| syms.symbol_of(a));
        let gens = |e: usize| {
            let ev = &self.events[e];
            if reads {
                ev.reads()
            } else {
                ev.writes()
            }
        };
        let mut inn: Vec<BTreeMap<SymId, BTreeSet<usize>>> = vec![BTreeMap::new(); n];
        let out_of = |e: usize, inn: &BTreeMap<SymId, BTreeSet<usize>>| {
            let mut out = inn.clone();
            if gens(e) {
                out.insert(sym(e).unwrap(), BTreeSet::from([e]));
            }
            out
        };
        let mut work: Vec<usize> = (0..n).rev().collect();
        let mut queued = vec![true; n];
        while let Some(e) = work.pop() {
            queued[e] = false;
            if !self.reachable[e] {
                continue;
            }
            let out = out_of(e, &inn[e]);
            for &s in &self.succ[e] {
                let mut changed = false;
                for (k, v) in &out {
                    let slot = inn[s].entry(*k).or_default();
                    for &x in v {
                        changed |= slot.insert(x);
                    }
                }
                if changed && !queued[s] {
                    queued[s] = true;
                    work.push(s);
                }
            }
        }
        (0..n)
            .filter(|&e| self.reachable[e] && self.events[e].is_occurrence())
            .map(|e| {
                let s = sym(e).unwrap();
                (e, inn[e].get(&s).cloned().unwrap_or_default())
            })
            .collect()
    }

    /// Occurrences after which some path reaches the exit without touching
    /// the symbol again.
    pub fn may_last_use(&self, syms: &SymbolTable) -> BTreeSet<usize> {
        let n = self.events.len();
        let sym = |e: usize| self.events[e].node.and_then(|a| syms.symbol_of(a));
        let symbols: BTreeSet<SymId> = (0..n).filter(|&e| self.events[e].is_occurrence()).filter_map(sym).collect();
        let mut out = BTreeSet::new();
        for s in symbols {
            let touches = |e: usize| self.events[e].is_occurrence() && sym(e) == Some(s);
            let mut clear = vec![false; n];
            let mut changed = true;
            while changed {
                changed = false;
                for e in (0..n).rev() {
                    if clear[e] {
                        continue;
                    }
                    let c = self.succ[e].iter().any(|&x| x == EXIT || (!touches(x) && clear[x]));
                    if c {
                        clear[e] = true;
                        changed = true;
                    }
                }
            }
            out.extend((0..n).filter(|&e| self.reachable[e] && touches(e) && clear[e]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn labels(ast: &Ast, cfg: &Cfg, events: &BTreeSet<usize>) -> Vec<String> {
        events.iter().map(|&e| ast.text(cfg.node(e)).to_string()).collect()
    }

    #[test]
    fn straight_line_steps_chain() {
        let ast = parse("a = f(1)\nb = g(a)\n").unwrap();
        let cfg = &build_cfgs(&ast)[0];
        let preds = cfg.step_predecessors();
        assert_eq!(preds.len(), 2);
        assert!(preds[0].1.is_empty());
        assert_eq!(preds[1].1, BTreeSet::from([preds[0].0]));
    }

    #[test]
    fn loop_has_back_edge_to_test() {
        let src = "def f(n):\n    while n > 0:\n        n -= 1\n    return n\n";
        let ast = parse(src).unwrap();
        let cfg = &build_cfgs(&ast)[1];
        let preds = cfg.step_predecessors();
        let kinds: Vec<Kind> = preds.iter().map(|(s, _)| ast.kind(cfg.node(*s))).collect();
        assert_eq!(kinds, [Kind::Compare, Kind::AugAssign, Kind::Return]);
        // the compare follows both entry and the loop body
        assert_eq!(preds[0].1, BTreeSet::from([preds[1].0]));
        assert_eq!(preds[2].1, BTreeSet::from([preds[0].0]));
    }

    #[test]
    fn code_after_return_is_unreachable() {
        let ast = parse("def f(a):\n    return a\n    a = 2\n").unwrap();
        let cfg = &build_cfgs(&ast)[1];
        assert_eq!(cfg.steps().count(), 1);
    }

    #[test]
    fn last_uses_in_both_branches() {
        let src = "def f(a, c):\n    if c:\n        g(a)\n    else:\n        h(a)\n    return c\n";
        let ast = parse(src).unwrap();
        let syms = SymbolTable::resolve(&ast);
        let cfg = &build_cfgs(&ast)[1];
        let last = cfg.may_last_use(&syms);
        let names = labels(&ast, cfg, &last);
        // g and h are module names used once each
        assert_eq!(names, ["g", "a", "h", "a", "c"]);
    }
}
