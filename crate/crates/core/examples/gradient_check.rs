//! Finite-difference gradient checks of every differentiable op, the full
//! encoder in all variants, and both task heads, in double precision.
//!
//! `cargo run --release --example gradient_check -- [cases]`

use heat_core::gradsuite;

fn main() -> anyhow::Result<()> {
    let cases = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(10);
    for seed in 0..cases as u64 {
        let r = gradsuite::run_case(seed)?;
        println!(
            "case {seed:>2}: {:>2} checks, {:>4} entries, max rel err {:.2e}  {}",
            r.checks, r.checked_entries, r.max_rel_err, r.worst
        );
    }
    let all = gradsuite::run(0, cases)?;
    println!(
        "overall max rel err {:.2e} (threshold {:.0e}): {}",
        all.max_rel_err,
        gradsuite::TOLERANCE,
        if all.passed() { "pass" } else { "FAIL" }
    );
    Ok(())
}
