use crate::Hypergraph;

/// Metadata key recording how many width-1 edges were dropped.
pub const DROPPED_KEY: &str = "binarize.dropped_unary";

/// Replaces each k-ary edge by its k(k-1) ordered member pairs.
///
/// A pair `(i, j)` of an edge of type `R` becomes an edge of type
/// `R:τi→τj` with members `src` and `dst`. Width-1 edges have no pairs and
/// disappear; their count is stored under [`DROPPED_KEY`].
pub fn binarize(g: &Hypergraph) -> Hypergraph {
    let mut out = Hypergraph {
        nodes: g.nodes.clone(),
        edges: Vec::new(),
        meta: g.meta.clone(),
    };
    let mut dropped = 0usize;
    for e in &g.edges {
        if e.width() == 1 {
            dropped += 1;
            continue;
        }
        for (i, a) in e.incidences.iter().enumerate() {
            for (j, b) in e.incidences.iter().enumerate() {
                if i == j {
                    continue;
                }
                let ty = format!("{}:{}\u{2192}{}", e.edge_type, a.qualifier, b.qualifier);
                out.add_edge(ty, [("src", a.node), ("dst", b.node)]);
            }
        }
    }
    if dropped > 0 {
        out.meta.insert(DROPPED_KEY.into(), dropped.to_string());
    }
    out
}
