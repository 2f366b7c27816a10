//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to a subset.

use mimo_cr::verify::{run_criterion, VerifyOptions};

fn main() {
    let ids: Vec<u8> = match std::env::var("ACCEPTANCE_ONLY") {
        Ok(s) => s.split(',').filter_map(|t| t.trim().parse().ok()).collect(),
        Err(_) => (1..=10).collect(),
    };
    let opts = VerifyOptions::default();
    let mut failed = 0;
    for id in ids {
        let r = run_criterion(id, &opts);
        let tag = if r.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {:<24} {tag}  [{:.1}s] {}", r.id, r.name, r.runtime_s, r.summary);
        if !r.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
