use mimo_cr::channel::{ChannelState, FadingEnsemble};
use mimo_cr::cr::{induced_quantities, JointSource};
use mimo_cr::protocol::{bsc, joint_typicality, run_protocol, ProtocolConfig, ProtocolOutcome, TransportConfig};
use mimo_cr::rng::SeedTree;
use mimo_cr::verify::criterion7_config;
use proptest::prelude::*;

fn run(cfg: &ProtocolConfig, src: &JointSource, seed: u64) -> ProtocolOutcome {
    let ens = FadingEnsemble::rayleigh(1, 1, 1.0).unwrap();
    run_protocol(src, &bsc(0.05).unwrap(), cfg, &ens, SeedTree::new(seed)).unwrap()
}

fn quick(n: usize, delta: f64) -> ProtocolConfig {
    let mut cfg = criterion7_config();
    cfg.block_length_n = n;
    cfg.typ_delta = delta;
    cfg.trials = 60;
    cfg.n_states = 5;
    cfg
}

#[test]
fn encoder_reserve_shrinks_as_typicality_widens() {
    let src = JointSource::dsbs(0.05).unwrap();
    let outs: Vec<ProtocolOutcome> = [0.02, 0.05, 0.1, 0.2].iter().map(|&d| run(&quick(12, d), &src, 9)).collect();
    for w in outs.windows(2) {
        for (a, b) in w[0].per_state.iter().zip(&w[1].per_state) {
            assert!(b.encoder_reserve <= a.encoder_reserve, "{} then {}", a.encoder_reserve, b.encoder_reserve);
        }
    }
}

#[test]
fn bin_sizes_and_alphabet_follow_the_rates() {
    let src = JointSource::dsbs(0.05).unwrap();
    let aux = bsc(0.05).unwrap();
    let (iux, iuy) = induced_quantities(&src, &aux).unwrap();
    for n in [4, 6, 8, 10, 12] {
        let cfg = quick(n, 0.05);
        let out = run(&cfg, &src, 1);
        let nf = n as f64;
        let n1 = ((nf * (iux - iuy + 3.0 * cfg.mu)).exp2().floor() as usize).max(1);
        let n2 = ((nf * (iuy - 2.0 * cfg.mu)).exp2().floor() as usize).max(1);
        assert_eq!((out.n1, out.n2), (n1, n2), "n={n}");
        assert_eq!(out.k_alphabet_size, n1 * n2 + 1);
        assert!((out.k_alphabet_size as f64).log2() <= nf * (src.h_x() + cfg.mu + 1.0));
        assert!(out.cardinality_ok);
    }
}

#[test]
fn identical_observations_agree() {
    let src = JointSource::identical(&[0.5, 0.5]).unwrap();
    let out = run(&quick(12, 0.05), &src, 4);
    let good = out.per_state.iter().filter(|s| s.disagreement <= 0.1).count();
    assert!(good as f64 >= 0.9 * out.per_state.len() as f64, "{:?}", out.per_state);
}

#[test]
fn control_run_agrees_only_on_the_reserve_value() {
    let src = JointSource::dsbs(0.05).unwrap();
    let mut cfg = quick(12, 0.05);
    cfg.transport = TransportConfig::AlwaysWrong;
    cfg.decoder_typicality = false;
    let out = run(&cfg, &src, 2);
    for s in &out.per_state {
        assert_eq!(s.transport_ok, 0.0);
        assert!((s.disagreement - (1.0 - s.both_reserve)).abs() < 1e-12, "{s:?}");
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let src = JointSource::dsbs(0.05).unwrap();
    let cfg = quick(10, 0.05);
    let with = |t: usize| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap().install(|| run(&cfg, &src, 11));
    assert_eq!(with(1), with(3));
}

#[test]
fn point_mass_ensemble_gives_identical_states() {
    let src = JointSource::dsbs(0.05).unwrap();
    let ens = FadingEnsemble::point_mass(ChannelState::scalar(3.0));
    let out = run_protocol(&src, &bsc(0.05).unwrap(), &quick(8, 0.05), &ens, SeedTree::new(0)).unwrap();
    assert!(out.per_state.iter().all(|s| s.transport_ok == 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn typicality_is_monotone_in_delta(a in prop::collection::vec(0u8..2, 20), b in prop::collection::vec(0u8..2, 20), d in 0.0f64..0.5, extra in 0.0f64..0.5) {
        let pmf = vec![vec![0.4, 0.1], vec![0.1, 0.4]];
        if joint_typicality(&a, &b, &pmf, d) {
            prop_assert!(joint_typicality(&a, &b, &pmf, d + extra));
        }
    }

    #[test]
    fn typicality_is_symmetric_under_transpose(a in prop::collection::vec(0u8..2, 16), b in prop::collection::vec(0u8..3, 16), d in 0.0f64..0.5) {
        let pmf = vec![vec![0.2, 0.1, 0.2], vec![0.1, 0.3, 0.1]];
        let t: Vec<Vec<f64>> = (0..3).map(|j| pmf.iter().map(|r| r[j]).collect()).collect();
        prop_assert_eq!(joint_typicality(&a, &b, &pmf, d), joint_typicality(&b, &a, &t, d));
    }
}
