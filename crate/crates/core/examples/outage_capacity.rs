//! Eta-outage capacity: the scalar closed form against the MIMO search, then
//! a 2x2 Rayleigh curve over eta on one shared pool of states.

use mimo_cr::channel::{FadingEnsemble, NoiseSpec};
use mimo_cr::outage::{capacity_curve_eta, eta_outage_capacity, siso_outage_capacity, GainQuantileSource, OutageSpec, SearchOptions, StatePool};
use mimo_cr::rng::SeedTree;

fn main() -> mimo_cr::error::Result<()> {
    let seed = SeedTree::new(7);
    let search = SearchOptions::default();

    let scalar = FadingEnsemble::rayleigh(1, 1, 1.0)?;
    let spec = OutageSpec::new(0.1, 10.0, 1.0)?.with_samples(100_000);
    let closed = siso_outage_capacity(&GainQuantileSource::Rayleigh { scale: 1.0 }, 0.1, 10.0, &NoiseSpec::new(1.0)?)?;
    let est = eta_outage_capacity(&scalar, &spec, &search, seed.label("siso"))?;
    println!("1x1 Rayleigh, eta=0.1, P=10: closed form {closed:.4}, search {:.4} bits", est.value_bits);

    let mimo = FadingEnsemble::rayleigh(2, 2, 1.0)?;
    let pool = StatePool::from_ensemble(&mimo, 2000, seed.label("pool"))?;
    let etas = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5];
    let base = OutageSpec::new(0.1, 10.0, 1.0)?.with_samples(pool.len());
    println!("eta,capacity_bits,bracket_lo,bracket_hi");
    for (eta, e) in etas.iter().zip(capacity_curve_eta(&pool, &etas, &base, &search, seed.label("curve"))?) {
        println!("{eta},{:.4},{:.4},{:.4}", e.value_bits, e.lower_bracket, e.upper_bracket);
    }
    Ok(())
}
