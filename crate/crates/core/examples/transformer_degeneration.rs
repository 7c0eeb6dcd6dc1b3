//! A graph whose only hyperedge is one position-qualified sequence over all
//! nodes, encoded without an edge token, reproduces a plain transformer
//! encoder that shares its weights.
//!
//! `cargo run --release --example transformer_degeneration`

use heat_core::reference::degeneration_check;

fn main() -> anyhow::Result<()> {
    let single = degeneration_check::<f32>(0, 20)?;
    let double = degeneration_check::<f64>(0, 20)?;
    println!("{} random inputs", single.cases);
    println!("  single precision: max abs diff {:.2e}", single.max_abs_diff);
    println!("  double precision: max abs diff {:.2e}", double.max_abs_diff);
    Ok(())
}
