//! Encodes an extracted program with HEAT and each of its variants, and
//! prints parameter counts and the final state of a few nodes.
//!
//! `cargo run --release --example encode_graph`

use heat_code::{extract, ExtractionConfig};
use heat_core::{rng_stream, GraphInput, HeatConfig, HeatEncoder, Variant, Vocab};
use heat_tensor::{ParameterStore, Tape};

fn main() -> anyhow::Result<()> {
    let source = "def f(xs, n):\n    i = 0\n    while i < n:\n        xs = xs + i\n        i += 1\n    return xs\n";
    let g = extract(source, &ExtractionConfig::default()).map_err(|e| anyhow::anyhow!("{e}"))?;
    let names = g
        .nodes
        .iter()
        .map(|n| n.label.as_str())
        .chain(g.edges.iter().map(|e| e.edge_type.as_str()))
        .chain(g.edges.iter().flat_map(|e| e.incidences.iter().map(|i| i.qualifier.as_str())));
    let vocab = Vocab::build(names, 1);
    let input = GraphInput::new(&g, &vocab);
    println!("{} nodes, {} hyperedges, vocab {}", g.num_nodes(), g.num_edges(), vocab.len());
    for variant in Variant::ALL {
        let config = HeatConfig::desk().with_variant(variant);
        let mut store = ParameterStore::<f32>::new();
        let encoder = HeatEncoder::register(&mut store, "encoder", &config, vocab.len(), &mut rng_stream(0, "init"))?;
        let batch = encoder.batch(&[&input])?;
        let tape = Tape::new();
        let states = encoder.forward(&tape, &store, &batch, None)?.nodes.value();
        let head: Vec<String> = states.row(0).iter().take(4).map(|v| format!("{v:+.3}")).collect();
        println!(
            "{:>18}: {:>7} parameters, node 0 starts {}",
            variant.name(),
            store.num_scalars(),
            head.join(" ")
        );
    }
    Ok(())
}
