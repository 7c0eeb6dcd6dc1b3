//! Link prediction on the synthetic qualified knowledge graph, where each
//! answer is decided by one qualifier. Compares HEAT with and without
//! qualifier embeddings.
//!
//! `cargo run --release --example kg_link_prediction -- [epochs]`

use std::time::Instant;

use heat_core::kg::{synthetic, SyntheticSpec};
use heat_core::kgtask::{evaluate, train, KgData, KgModel, KgTrainOptions};
use heat_core::{rng_stream, HeatConfig, Variant};
use heat_tensor::ParameterStore;

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(60);
    let ds = synthetic(&SyntheticSpec::default(), &mut rng_stream(0, "kg"));
    println!(
        "{} entities, {} train / {} valid / {} test statements",
        ds.entities.len(),
        ds.train.len(),
        ds.valid.len(),
        ds.test.len()
    );
    let data = KgData::new(&ds);
    for variant in [Variant::Full, Variant::NoQualifiers] {
        let mut config = HeatConfig::desk().with_variant(variant);
        config.layers = 1;
        let mut store = ParameterStore::<f32>::new();
        let model = KgModel::register(&mut store, &config, data.vocab.len(), data.num_entities, &mut rng_stream(0, "init"))?;
        let options = KgTrainOptions {
            epochs,
            ..KgTrainOptions::default()
        };
        let start = Instant::now();
        train(&model, &mut store, &data, &options, |epoch, loss, store| {
            if (epoch + 1) % 10 == 0 {
                let m = evaluate(&model, store, &data, &data.test, 256).expect("evaluation");
                println!(
                    "{:>14} epoch {:>3} loss {:.5} test MRR {:.3} H@1 {:.3} H@10 {:.3} ({:.0}s)",
                    variant.name(),
                    epoch + 1,
                    loss,
                    m.mrr,
                    m.hits1,
                    m.hits10,
                    start.elapsed().as_secs_f64()
                );
            }
        })?;
    }
    Ok(())
}
