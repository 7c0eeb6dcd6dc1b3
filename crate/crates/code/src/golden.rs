//! The bundled reference snippet and the hyperedges it must produce.
//!
//! Node `nK` in the listing is graph node `K - 1`. The call edge uses the
//! argument and call nodes the snippet actually has (`x` at n13, the call
//! at n16).

use heat_graph::{Hyperedge, Hypergraph, NodeKind};

use crate::extract::{extract, ExtractionConfig};

pub const SNIPPET: &str = include_str!("../data/golden.py");

/// Expected edges as `(type, [(qualifier, figure number)])`; a `0` figure
/// number stands for the symbol node of `x`.
pub const EXPECTED: &[(&str, &[(&str, usize)])] = &[
    ("AstNode", &[("node", 19), ("test", 6), ("body", 17)]),
    ("AstNode", &[("node", 17), ("value", 16), ("target", 9)]),
    ("foo", &[("rval", 16), ("fzz", 13)]),
    ("__getattribute__", &[("rval", 23), ("self", 20), ("name", 22)]),
    ("MayRead", &[("prev", 4), ("prev", 13), ("succ", 25)]),
    ("CtrlF", &[("prev", 6), ("prev", 16), ("succ", 23)]),
    ("Symbol", &[("sym", 0), ("occ", 4), ("occ", 9), ("occ", 13), ("may_last_use", 25)]),
];

/// Leading positions of the first `Tokens` edge.
pub const TOKENS_PREFIX: &[usize] = &[1, 2, 3, 4, 5, 7, 8, 9, 10, 11, 12, 13];

fn multiset(e: &Hyperedge) -> Vec<(String, usize)> {
    let mut v: Vec<_> = e.incidences.iter().map(|i| (i.qualifier.clone(), i.node)).collect();
    v.sort();
    v
}

/// Every expected edge missing from `g`, rendered for display.
pub fn missing(g: &Hypergraph) -> Vec<String> {
    let mut out = Vec::new();
    let sym_x = g.nodes.iter().find(|n| n.kind == NodeKind::Symbol && n.label == "x").map(|n| n.id);
    for (ty, incs) in EXPECTED {
        let want: Option<Vec<(String, usize)>> = incs
            .iter()
            .map(|&(q, fig)| {
                let node = if fig == 0 { sym_x? } else { fig - 1 };
                Some((q.to_string(), node))
            })
            .collect();
        let found = want.as_ref().is_some_and(|w| {
            let mut w = w.clone();
            w.sort();
            g.edges_of_type(ty).any(|e| multiset(e) == w)
        });
        if !found {
            let parts: Vec<String> = incs
                .iter()
                .map(|(q, f)| if *f == 0 { format!("{q}:n_x") } else { format!("{q}:n{f}") })
                .collect();
            out.push(format!("{ty}({})", parts.join(", ")));
        }
    }
    let prefix_ok = g.edges_of_type("Tokens").next().is_some_and(|e| {
        e.width() >= TOKENS_PREFIX.len()
            && TOKENS_PREFIX
                .iter()
                .enumerate()
                .all(|(i, &fig)| e.incidences[i].qualifier == format!("p{}", i + 1) && e.incidences[i].node == fig - 1)
    });
    if !prefix_ok {
        out.push("Tokens(p1:n1, ..., p12:n13, ...)".into());
    }
    out
}

/// Extracts the snippet with default settings and checks it.
pub fn run() -> Result<Hypergraph, Vec<String>> {
    let g = extract(SNIPPET, &ExtractionConfig::default()).map_err(|e| vec![e.to_string()])?;
    match missing(&g) {
        m if m.is_empty() => Ok(g),
        m => Err(m),
    }
}
