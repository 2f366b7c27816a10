//! The binning protocol over a Rayleigh channel with an ideal transport,
//! followed by the control run whose bin index is always wrong.

use mimo_cr::channel::FadingEnsemble;
use mimo_cr::cr::JointSource;
use mimo_cr::protocol::{bsc, run_protocol, TransportConfig};
use mimo_cr::rng::SeedTree;
use mimo_cr::verify::criterion7_config;

fn main() -> mimo_cr::error::Result<()> {
    let src = JointSource::dsbs(0.05)?;
    let aux = bsc(0.05)?;
    let ens = FadingEnsemble::rayleigh(1, 1, 1.0)?;
    let cfg = criterion7_config();
    let out = run_protocol(&src, &aux, &cfg, &ens, SeedTree::new(1))?;
    println!("N1={} N2={} |K|={} (log2 bound {:.1})", out.n1, out.n2, out.k_alphabet_size, out.log2_k_bound);
    println!("state,disagreement,encoder_reserve,transport_ok");
    for s in &out.per_state {
        println!("{},{:.3},{:.3},{:.0}", s.state_index, s.disagreement, s.encoder_reserve, s.transport_ok);
    }
    println!("median disagreement {:.3}, outage fraction {:.2}", out.median_disagreement, out.outage_fraction);

    let mut ctl = cfg.clone();
    ctl.transport = TransportConfig::AlwaysWrong;
    ctl.decoder_typicality = false;
    let bad = run_protocol(&src, &aux, &ctl, &ens, SeedTree::new(1))?;
    println!("control run median disagreement {:.3}", bad.median_disagreement);
    Ok(())
}
