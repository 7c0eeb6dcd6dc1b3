use std::fmt;

use crate::{EdgeId, Hypergraph, NodeId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NodeIdOutOfOrder { position: usize, id: NodeId },
    EmptyLabel(NodeId),
    EdgeIdOutOfOrder { position: usize, id: EdgeId },
    EmptyHyperedge(EdgeId),
    EmptyEdgeType(EdgeId),
    EmptyQualifier { edge: EdgeId, position: usize },
    DanglingNode { edge: EdgeId, node: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeIdOutOfOrder { position, id } => {
                write!(f, "node at position {position} has id {id}")
            }
            Violation::EmptyLabel(n) => write!(f, "node {n} has an empty label"),
            Violation::EdgeIdOutOfOrder { position, id } => {
                write!(f, "edge at position {position} has id {id}")
            }
            Violation::EmptyHyperedge(e) => write!(f, "empty hyperedge {e}"),
            Violation::EmptyEdgeType(e) => write!(f, "edge {e} has an empty type"),
            Violation::EmptyQualifier { edge, position } => {
                write!(f, "edge {edge} incidence {position} has an empty qualifier")
            }
            Violation::DanglingNode { edge, node } => {
                write!(f, "dangling node reference: edge {edge} names node {node}")
            }
        }
    }
}

/// All invariant violations; an empty list means the graph is valid.
pub fn validate(g: &Hypergraph) -> Vec<Violation> {
    let mut out = Vec::new();
    for (pos, n) in g.nodes.iter().enumerate() {
        if n.id != pos {
            out.push(Violation::NodeIdOutOfOrder { position: pos, id: n.id });
        }
        if n.label.is_empty() {
            out.push(Violation::EmptyLabel(n.id));
        }
    }
    for (pos, e) in g.edges.iter().enumerate() {
        if e.id != pos {
            out.push(Violation::EdgeIdOutOfOrder { position: pos, id: e.id });
        }
        if e.incidences.is_empty() {
            out.push(Violation::EmptyHyperedge(e.id));
        }
        if e.edge_type.is_empty() {
            out.push(Violation::EmptyEdgeType(e.id));
        }
        for (i, inc) in e.incidences.iter().enumerate() {
            if inc.qualifier.is_empty() {
                out.push(Violation::EmptyQualifier { edge: e.id, position: i });
            }
            if inc.node >= g.nodes.len() {
                out.push(Violation::DanglingNode {
                    edge: e.id,
                    node: inc.node,
                });
            }
        }
    }
    out
}
