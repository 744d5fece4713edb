//! Finite-difference checks of the transformer, tokenizer and CIP objectives.

use mmvq::cli::gradsuite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    for r in gradsuite::run_all(seed)? {
        println!(
            "{:<22} max rel err {:.2e} over {} coordinates (worst {}), surrogate gap {:.1e} -> {}",
            r.name,
            r.max_rel_err,
            r.checked,
            r.worst,
            r.surrogate_gap,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
