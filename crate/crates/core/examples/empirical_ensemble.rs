//! Round trip of an empirical ensemble through CSV, then its outage
//! capacity. Empirical ensembles are used exactly, without resampling.

use mimo_cr::channel::{write_states_csv, FadingEnsemble};
use mimo_cr::outage::{eta_outage_capacity, OutageSpec, SearchOptions};
use mimo_cr::rng::SeedTree;

fn main() -> mimo_cr::error::Result<()> {
    let seed = SeedTree::new(4);
    let ray = FadingEnsemble::rayleigh(2, 1, 1.0)?;
    let mut rng = seed.label("draws").rng();
    let states: Vec<_> = (0..500).map(|_| ray.sample_state(&mut rng)).collect();
    let mut buf = Vec::new();
    write_states_csv(&mut buf, &states)?;
    let ens = FadingEnsemble::read_empirical_csv(buf.as_slice())?;
    let spec = OutageSpec::new(0.1, 10.0, 1.0)?;
    let est = eta_outage_capacity(&ens, &spec, &SearchOptions::default(), seed.label("search"))?;
    println!("{} states, eta=0.1: {:.4} bits (exact pool: {})", states.len(), est.value_bits, est.diagnostics.exact_pool);
    Ok(())
}
