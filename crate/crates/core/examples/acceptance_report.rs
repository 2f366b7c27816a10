//! Runs selected acceptance criteria and prints the JSON report.
//! Usage: `cargo run --release --example acceptance_report -- 1 2 5`.

use mimo_cr::verify::{run_suite, VerifyOptions};

fn main() {
    let ids: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids = if ids.is_empty() { vec![1, 2, 5, 7, 9] } else { ids };
    let report = run_suite(&ids, &VerifyOptions::default());
    println!("{}", serde_json::to_string_pretty(&report).expect("plain data"));
    std::process::exit(if report.all_pass { 0 } else { 1 });
}
