//! Trains the bug localization and repair model on a generated corpus and
//! reports Joint/Loc/Repair accuracy for the full model and one ablation.
//!
//! `cargo run --release --example bug_detection -- [programs] [epochs]`

use std::time::Instant;

use heat_core::bugtask::{build_vocab, evaluate, generate_samples, train, BugModel, Prepared, TrainOptions};
use heat_core::{rng_stream, HeatConfig, Variant};
use heat_tensor::ParameterStore;

fn main() -> anyhow::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let programs = args.first().copied().unwrap_or(600);
    let epochs = args.get(1).copied().unwrap_or(4);
    let samples = generate_samples(1, programs);
    let split = programs * 4 / 5;
    let vocab = build_vocab(&samples[..split]);
    let prepared: Vec<Prepared> = samples.iter().map(|s| Prepared::new(s, &vocab)).collect();
    let (train_set, test_set) = prepared.split_at(split);
    let nodes: usize = samples.iter().map(|s| s.graph.nodes.len()).sum();
    println!(
        "{} programs, {:.0} nodes on average, vocab {}",
        programs,
        nodes as f64 / programs as f64,
        vocab.len()
    );
    for variant in [Variant::Full, Variant::NoQualifiers] {
        let config = HeatConfig::desk().with_variant(variant);
        let mut store = ParameterStore::<f32>::new();
        let model = BugModel::register(&mut store, &config, vocab.len(), &mut rng_stream(1, "init"))?;
        let options = TrainOptions {
            epochs,
            ..TrainOptions::default()
        };
        let start = Instant::now();
        train(&model, &mut store, train_set, &options, |log, store| {
            let m = evaluate(&model, store, test_set, 64).expect("evaluation");
            println!(
                "{:>14} epoch {} loss {:.4} joint {:.3} loc {:.3} repair {:.3} ({:.0}s)",
                variant.name(),
                log.epoch,
                log.loss,
                m.joint,
                m.loc,
                m.repair,
                start.elapsed().as_secs_f64()
            );
        })?;
    }
    Ok(())
}
