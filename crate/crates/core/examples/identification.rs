//! Identification on top of common randomness: more identities than the
//! second stage has messages.

use mimo_cr::channel::{ChannelState, FadingEnsemble};
use mimo_cr::cr::JointSource;
use mimo_cr::identification::estimate_id_errors;
use mimo_cr::protocol::bsc;
use mimo_cr::rng::SeedTree;
use mimo_cr::verify::criterion9_config;

fn main() -> mimo_cr::error::Result<()> {
    let src = JointSource::identical(&[0.5, 0.5])?;
    let cfg = criterion9_config();
    let ens = FadingEnsemble::point_mass(ChannelState::scalar(1.0));
    let out = estimate_id_errors(&src, &bsc(0.14)?, &cfg, &ens, SeedTree::new(3))?;
    println!(
        "{} identities, CR alphabet {}, second stage {} messages over {} uses",
        out.identity_count, out.m_prime, out.second_stage_messages, out.second_stage_length
    );
    println!("lambda1 {:.3}, lambda2 {:.3}", out.measured_lambda1, out.measured_lambda2);
    Ok(())
}
