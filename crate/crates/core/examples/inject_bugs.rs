//! Generates programs, injects single-token bugs and shows the localization
//! and repair targets of a few samples.
//!
//! `cargo run --example inject_bugs -- [count]`

use heat_core::bugtask::generate_samples;

fn main() -> anyhow::Result<()> {
    let count = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(3);
    for (i, s) in generate_samples(0, count).iter().enumerate() {
        println!("--- sample {i}: {} candidate locations", s.candidates.len());
        print!("{}", s.source);
        match (&s.bug, s.target) {
            (Some(b), Some(t)) => println!(
                "{:?} at node {} (candidate {t}): `{}` was `{}`; rewrites offered there: {:?}",
                b.kind, b.location, b.replacement, b.original, s.rewrites[t]
            ),
            _ => println!("no bug"),
        }
    }
    Ok(())
}
