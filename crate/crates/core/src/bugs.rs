//! Synthetic bug injection: single-token rewrites of a program and the
//! localization/repair targets they induce.

use heat_code::ast::{Ast, Kind};
use heat_code::extract::{analyze, ExtractionConfig, Program};
use heat_code::lexer::replace_token;
use heat_code::symbols::{function_locals, Scope};
use heat_code::SyntaxError;
use heat_graph::Hypergraph;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of samples left unchanged.
pub const NO_BUG_RATE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BugKind {
    VarMisuse,
    BinOpSwap,
    CompareSwap,
    BoolOpSwap,
    AugAssignSwap,
}

impl BugKind {
    pub const ALL: [BugKind; 5] = [
        BugKind::VarMisuse,
        BugKind::BinOpSwap,
        BugKind::CompareSwap,
        BugKind::BoolOpSwap,
        BugKind::AugAssignSwap,
    ];
}

/// Operator families; a swap stays within the family of the original.
pub const FAMILIES: &[(BugKind, &[&str])] = &[
    (BugKind::BinOpSwap, &["+", "-"]),
    (BugKind::BinOpSwap, &["*", "//", "%"]),
    (BugKind::CompareSwap, &["<", ">"]),
    (BugKind::CompareSwap, &["<=", ">="]),
    (BugKind::CompareSwap, &["==", "!="]),
    (BugKind::BoolOpSwap, &["and", "or"]),
    (BugKind::AugAssignSwap, &["+=", "-="]),
    (BugKind::AugAssignSwap, &["*=", "//="]),
];

fn family_alternatives(kind: BugKind, op: &str) -> Vec<String> {
    FAMILIES
        .iter()
        .find(|(k, ops)| *k == kind && ops.contains(&op))
        .map(|(_, ops)| ops.iter().filter(|&&o| o != op).map(|o| o.to_string()).collect())
        .unwrap_or_default()
}

/// A place where a single-token rewrite is legal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Site {
    pub kind: BugKind,
    /// Graph node: the Name leaf, or the operator's AST node.
    pub node: usize,
    /// Token carrying the text to rewrite.
    pub token: usize,
    pub current: String,
    /// Replacement texts, sorted.
    pub alternatives: Vec<String>,
}

/// Every rewrite site of a program, ordered by node id.
pub fn sites(ast: &Ast) -> Vec<Site> {
    let mut out = Vec::new();
    for stmt in ast.suite(ast.root) {
        if ast.kind(stmt) != Kind::FunctionDef {
            continue;
        }
        let locals = function_locals(ast, stmt);
        let assign_targets: std::collections::HashSet<usize> = ast
            .preorder(stmt)
            .into_iter()
            .filter(|&n| ast.kind(n) == Kind::Assign)
            .filter_map(|n| ast.child(n, "target"))
            .collect();
        for n in ast.preorder(stmt) {
            let kind = match ast.kind(n) {
                Kind::BinOp => BugKind::BinOpSwap,
                Kind::Compare => BugKind::CompareSwap,
                Kind::BoolOp => BugKind::BoolOpSwap,
                Kind::AugAssign => BugKind::AugAssignSwap,
                Kind::Name => {
                    let name = ast.text(n);
                    if assign_targets.contains(&n) || !locals.contains(name) {
                        continue;
                    }
                    let alternatives: Vec<String> = locals.iter().filter(|l| *l != name).cloned().collect();
                    if !alternatives.is_empty() {
                        out.push(Site {
                            kind: BugKind::VarMisuse,
                            node: ast.gid(n),
                            token: ast.node(n).token.expect("leaf token"),
                            current: name.to_string(),
                            alternatives,
                        });
                    }
                    continue;
                }
                _ => continue,
            };
            let op = ast.child(n, "op").expect("operator child");
            let current = ast.text(op).to_string();
            let mut alternatives = family_alternatives(kind, &current);
            alternatives.sort();
            if !alternatives.is_empty() {
                out.push(Site {
                    kind,
                    node: ast.gid(n),
                    token: ast.node(op).token.expect("leaf token"),
                    current,
                    alternatives,
                });
            }
        }
    }
    out.sort_by_key(|s| s.node);
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugRewrite {
    pub kind: BugKind,
    pub location: usize,
    pub original: String,
    pub replacement: String,
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BugSample {
    pub source: String,
    pub graph: Hypergraph,
    /// Candidate location nodes, ascending; NoBug is the extra final option.
    pub candidates: Vec<usize>,
    /// Rewrite texts available at each candidate.
    pub rewrites: Vec<Vec<String>>,
    /// Index into `candidates`; `None` means NoBug.
    pub target: Option<usize>,
    /// Index into `rewrites[target]` of the fix.
    pub fix: Option<usize>,
    pub bug: Option<BugRewrite>,
}

impl BugSample {
    /// The localization class: a candidate index, or `candidates.len()` for
    /// NoBug.
    pub fn location_class(&self) -> usize {
        self.target.unwrap_or(self.candidates.len())
    }

    fn from_program(program: Program, bug: Option<BugRewrite>) -> Option<Self> {
        let sites = sites(&program.ast);
        let candidates: Vec<usize> = sites.iter().map(|s| s.node).collect();
        let rewrites: Vec<Vec<String>> = sites.iter().map(|s| s.alternatives.clone()).collect();
        let (target, fix) = match &bug {
            None => (None, None),
            Some(b) => {
                let t = candidates.iter().position(|&c| c == b.location)?;
                let f = rewrites[t].iter().position(|r| *r == b.original)?;
                (Some(t), Some(f))
            }
        };
        Some(BugSample {
            source: program.source,
            graph: program.graph,
            candidates,
            rewrites,
            target,
            fix,
            bug,
        })
    }
}

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("syntax error: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("program has no rewrite site")]
    NoSite,
}

fn same_structure(a: &Ast, b: &Ast) -> bool {
    a.nodes.len() == b.nodes.len()
        && a.num_gids == b.num_gids
        && a.nodes.iter().zip(&b.nodes).all(|(x, y)| {
            x.kind == y.kind
                && x.gid == y.gid
                && x.children.len() == y.children.len()
                && x.children.iter().zip(&y.children).all(|(p, q)| p == q)
        })
}

/// With probability [`NO_BUG_RATE`] returns the program unchanged;
/// otherwise picks a bug kind uniformly among those with a site, a site
/// uniformly, and a replacement uniformly. Rewrites that would change the
/// tree shape are skipped.
pub fn inject_bug<R: Rng + ?Sized>(source: &str, config: &ExtractionConfig, rng: &mut R) -> Result<BugSample, InjectError> {
    let program = analyze(source, config)?;
    if rng.gen_bool(NO_BUG_RATE) {
        return BugSample::from_program(program, None).ok_or(InjectError::NoSite);
    }
    let all = sites(&program.ast);
    let mut kinds: Vec<BugKind> = BugKind::ALL.into_iter().filter(|k| all.iter().any(|s| s.kind == *k)).collect();
    while !kinds.is_empty() {
        let kind = kinds.remove(rng.gen_range(0..kinds.len()));
        let mut options: Vec<(&Site, &String)> = all
            .iter()
            .filter(|s| s.kind == kind)
            .flat_map(|s| s.alternatives.iter().map(move |a| (s, a)))
            .collect();
        options.shuffle(rng);
        for (site, replacement) in options {
            let tok = &program.ast.tokens[site.token];
            let buggy = replace_token(source, tok, replacement);
            let Ok(p) = analyze(&buggy, config) else { continue };
            if !same_structure(&program.ast, &p.ast) {
                continue;
            }
            let bug = BugRewrite {
                kind,
                location: site.node,
                original: site.current.clone(),
                replacement: replacement.clone(),
            };
            // the fix must be offered back at the bug site
            if let Some(sample) = BugSample::from_program(p, Some(bug)) {
                return Ok(sample);
            }
        }
    }
    Err(InjectError::NoSite)
}

/// Scope check used by tests: every VarMisuse site is a function local.
pub fn is_function_local(program: &Program, node: usize) -> bool {
    program
        .symbols
        .symbols
        .iter()
        .filter(|s| matches!(s.scope, Scope::Function(_)))
        .flat_map(|s| &s.occurrences)
        .any(|&o| program.ast.gid(o) == node)
}
