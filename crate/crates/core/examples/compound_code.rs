//! The coding lemmas against simulation, then a random code on a
//! three-state family against its Feinstein bound.

use mimo_cr::compound::run_feinstein_experiment;
use mimo_cr::rng::SeedTree;
use mimo_cr::verify::{bound_checks, criterion8_cases};

fn main() -> mimo_cr::error::Result<()> {
    let seed = SeedTree::new(2);
    println!("bound,parameters,analytic,empirical,pass");
    for c in bound_checks(seed.label("lemmas"), (20_000, 500), None)? {
        println!("{},{},{:.3e},{:.3e},{}", c.bound_name, c.parameters, c.analytic, c.empirical, c.pass);
    }
    for (i, (fam, p, r, beta)) in criterion8_cases()?.into_iter().enumerate() {
        let exp = run_feinstein_experiment(&fam, p, r, beta, 200, 300, seed.label("code").index(i as u64))?;
        let worst = exp.per_state.iter().map(|s| s.error_rate).fold(0.0, f64::max);
        println!(
            "P={p}: max-min rate {:.3}, R={r}, tau={}, bound {:.3e}, worst state error {worst:.3e}",
            exp.max_min_rate, exp.tau, exp.bound
        );
    }
    Ok(())
}
