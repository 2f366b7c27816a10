use mimo_cr::channel::{log_det_mi, ChannelState, InputCovariance, NoiseSpec};
use mimo_cr::compound::{run_feinstein_experiment, simulate_compound_error, CompoundFamily, GaussianCodebook, ThresholdDecoderSpec};
use mimo_cr::rng::SeedTree;
use mimo_cr::verify::criterion8_cases;

fn decode_error_above_capacity(n: usize) -> f64 {
    // f = 0.5 bit; sending at 1.5 bits per use
    let g = ChannelState::scalar((0.5f64.exp2() - 1.0).sqrt());
    let noise = NoiseSpec::new(1.0).unwrap();
    let fam = CompoundFamily::new(vec![g.clone()], 1.0, noise).unwrap();
    let q = InputCovariance::isotropic(1, 1.0).unwrap();
    let f = log_det_mi(&g, &q, &noise).unwrap();
    assert!((f - 0.5).abs() < 1e-12);
    let rate = f + 1.0;
    let tau = (n as f64 * rate).exp2().floor() as usize;
    let book = GaussianCodebook::generate(&q, tau, n, 2.0, &mut SeedTree::new(n as u64).rng()).unwrap();
    // thresholds of a Feinstein code with nominal margin 0.5
    let nf = n as f64;
    let dec = ThresholdDecoderSpec::new(&fam, &q, nf * (rate + 0.5 / 8.0), nf * 0.5 / 8.0).unwrap();
    let est = simulate_compound_error(&book, &dec, &fam, fam.states(), 400, 0.95, SeedTree::new(7)).unwrap();
    est[0].error_rate
}

#[test]
fn rate_above_capacity_fails() {
    let errs: Vec<f64> = [4, 8, 10].iter().map(|&n| decode_error_above_capacity(n)).collect();
    assert!(errs[2] >= 0.8, "{errs:?}");
    assert!(errs[2] >= errs[0] - 0.05, "{errs:?}");
}

#[test]
fn informative_bound_dominates_simulation() {
    let cases = criterion8_cases().unwrap();
    let (fam, p, r, beta) = &cases[1];
    let exp = run_feinstein_experiment(fam, *p, *r, *beta, 200, 200, SeedTree::new(99)).unwrap();
    assert!(exp.nontrivial, "bound {}", exp.bound);
    assert!(exp.dominated, "{:?}", exp.per_state);
    assert_eq!(exp.tau, exp.setup.tau() as usize);
    // the margin is half the gap to the max-min rate
    assert!((2.0 * exp.setup.theta - (exp.max_min_rate - r)).abs() < 1e-12);
}

#[test]
fn literal_margin_gives_a_vacuous_bound() {
    let cases = criterion8_cases().unwrap();
    let (fam, p, r, beta) = &cases[0];
    let exp = run_feinstein_experiment(fam, *p, *r, *beta, 200, 50, SeedTree::new(1)).unwrap();
    assert!(!exp.nontrivial && exp.bound >= 1.0);
}

#[test]
fn experiment_rejects_rates_at_or_above_the_max_min_rate() {
    let cases = criterion8_cases().unwrap();
    let (fam, p, _, beta) = &cases[0];
    assert!(run_feinstein_experiment(fam, *p, 0.6, *beta, 200, 10, SeedTree::new(1)).is_err());
}
