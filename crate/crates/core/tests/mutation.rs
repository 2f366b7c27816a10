//! A corrupted bound constant must make the suite fail, naming the check.

use mimo_cr::verify::{bound_checks, run_criterion, Mutation, VerifyOptions, BOUND_TRIALS};
use mimo_cr::rng::SeedTree;

#[test]
fn corrupted_exponent_fails_bound_domination() {
    let opts = VerifyOptions { mutation: Some(Mutation::ChernoffExponent), ..Default::default() };
    let r = run_criterion(4, &opts);
    assert!(!r.pass);
    assert_eq!(r.name, "bound-domination");
    assert!(r.summary.contains("info-density-deviation"), "{}", r.summary);
}

#[test]
fn mutation_touches_only_the_deviation_bound() {
    let seed = SeedTree::new(3);
    let clean = bound_checks(seed, (20_000, 200), None).unwrap();
    let bad = bound_checks(seed, (20_000, 200), Some(Mutation::ChernoffExponent)).unwrap();
    for (c, b) in clean.iter().zip(&bad) {
        assert_eq!(c.empirical, b.empirical);
        if c.bound_name == "info-density-deviation" {
            assert!(b.analytic < c.analytic);
        } else {
            assert_eq!(c, b);
        }
    }
    assert!(bad.iter().any(|b| !b.pass));
    assert_eq!(BOUND_TRIALS, (100_000, 1000));
}
