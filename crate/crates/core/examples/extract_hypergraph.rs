//! Turns a small program into a typed, qualified hypergraph and prints its
//! hyperedges grouped by type.
//!
//! `cargo run --example extract_hypergraph -- [file.py]`

use std::collections::BTreeMap;

use heat_code::{extract, ExtractionConfig};

const PROGRAM: &str = "\
def clamp(value, low, high):
    if value < low:
        value = low
    elif value > high:
        value = high
    return value

total = clamp(7, 0, 5)
";

fn main() -> anyhow::Result<()> {
    let source = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => PROGRAM.to_string(),
    };
    let g = extract(&source, &ExtractionConfig::default()).map_err(|e| anyhow::anyhow!("{e}"))?;
    println!("{} nodes, {} hyperedges", g.num_nodes(), g.num_edges());
    let mut by_type: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for e in &g.edges {
        let members: Vec<String> = e
            .incidences
            .iter()
            .map(|i| format!("{}:n{}({})", i.qualifier, i.node, g.nodes[i.node].label))
            .collect();
        by_type.entry(&e.edge_type).or_default().push(members.join(" "));
    }
    for (ty, edges) in by_type {
        println!("\n{ty} x{}", edges.len());
        for e in edges.iter().take(4) {
            println!("  {e}");
        }
        if edges.len() > 4 {
            println!("  ...");
        }
    }
    Ok(())
}
