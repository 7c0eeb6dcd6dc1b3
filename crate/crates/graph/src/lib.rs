//! Typed and qualified hypergraphs.
//!
//! A hyperedge has a relation type and a list of `(qualifier, node)`
//! incidences. The list order is kept for reproducible output only; consumers
//! treat incidences as a multiset.

mod binarize;
mod io;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use binarize::binarize;
pub use io::{from_json_line, read_jsonl, to_json_line, write_jsonl};
pub use validate::{validate, Violation};

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Token,
    AstNode,
    Symbol,
    Entity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub label: String,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Incidence {
    pub qualifier: String,
    pub node: NodeId,
}

impl Incidence {
    pub fn new(qualifier: impl Into<String>, node: NodeId) -> Self {
        Incidence {
            qualifier: qualifier.into(),
            node,
        }
    }
}

impl Serialize for Incidence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (&self.qualifier, self.node).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Incidence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (qualifier, node) = <(String, NodeId)>::deserialize(d)?;
        Ok(Incidence { qualifier, node })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperedge {
    pub id: EdgeId,
    #[serde(rename = "type")]
    pub edge_type: String,
    pub incidences: Vec<Incidence>,
}

impl Hyperedge {
    pub fn width(&self) -> usize {
        self.incidences.len()
    }

    /// Incidences sorted, for order-insensitive comparison.
    pub fn multiset(&self) -> Vec<(&str, NodeId)> {
        let mut v: Vec<_> = self.incidences.iter().map(|i| (i.qualifier.as_str(), i.node)).collect();
        v.sort();
        v
    }
}

impl fmt::Display for Hyperedge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.edge_type)?;
        for (i, inc) in self.incidences.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}:n{}", inc.qualifier, inc.node)?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypergraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Hyperedge>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Hypergraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, label: impl Into<String>, kind: NodeKind) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            label: label.into(),
            kind,
        });
        id
    }

    pub fn add_edge<Q: Into<String>>(&mut self, edge_type: impl Into<String>, incidences: impl IntoIterator<Item = (Q, NodeId)>) -> EdgeId {
        let id = self.edges.len();
        self.edges.push(Hyperedge {
            id,
            edge_type: edge_type.into(),
            incidences: incidences.into_iter().map(|(q, n)| Incidence::new(q, n)).collect(),
        });
        id
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Every `(edge, qualifier)` in which `node` participates, ordered by
    /// edge id then incidence position.
    pub fn incident_edges(&self, node: NodeId) -> Result<Vec<(EdgeId, &str)>, GraphError> {
        if node >= self.nodes.len() {
            return Err(GraphError::UnknownNode(node));
        }
        Ok(self
            .edges
            .iter()
            .flat_map(|e| {
                e.incidences
                    .iter()
                    .filter(move |i| i.node == node)
                    .map(move |i| (e.id, i.qualifier.as_str()))
            })
            .collect())
    }

    /// Edges of a given relation type.
    pub fn edges_of_type<'a>(&'a self, edge_type: &'a str) -> impl Iterator<Item = &'a Hyperedge> {
        self.edges.iter().filter(move |e| e.edge_type == edge_type)
    }
}
