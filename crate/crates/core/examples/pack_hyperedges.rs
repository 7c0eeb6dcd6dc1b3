//! Greedy packing of hyperedge sequences into fixed-width attention rows,
//! compared with exhaustive search on small instances.
//!
//! `cargo run --example pack_hyperedges`

use heat_core::packing::{greedy_pack, optimal_pack_bruteforce, packing_cost, Bucket, MicrobatchSpec, PackedBatch};

fn show(buckets: &[Bucket]) -> String {
    buckets
        .iter()
        .map(|b| format!("{}{:?}", b.width, b.segments.iter().map(|s| s.len).collect::<Vec<_>>()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> anyhow::Result<()> {
    let small = MicrobatchSpec::new(vec![4, 8, 16])?;
    for lengths in [vec![9, 7], vec![3, 3, 3, 3], vec![2, 3, 2, 5, 1, 12, 15]] {
        let greedy = greedy_pack(&lengths, &small)?;
        let (best, optimal) = optimal_pack_bruteforce(&lengths, &small)?;
        println!("{lengths:?}");
        println!("  greedy  cost {:>4}  {}", packing_cost(&greedy), show(&greedy));
        println!("  optimal cost {:>4}  {}", best, show(&optimal));
    }

    // A graph-sized workload with the default widths.
    let lengths: Vec<usize> = (0..40).map(|i| 1 + (i * 37) % 90).chain([700, 300, 1024]).collect();
    let packed = PackedBatch::pack(&lengths, &MicrobatchSpec::default())?;
    println!("\n{} sequences, {} positions", lengths.len(), packed.total_len());
    for mb in &packed.microbatches {
        let used: usize = mb.rows.iter().map(Bucket::used).sum();
        println!(
            "  width {:>4}: {:>2} rows, fill {:.2}",
            mb.width,
            mb.rows.len(),
            used as f64 / (mb.width * mb.rows.len()) as f64
        );
    }
    println!("  quadratic waste {}", packed.cost());
    Ok(())
}
