//! Mutual information, water-filling and the operator norm of one state.

use mimo_cr::channel::{log_det_mi, operator_norm, waterfilling_capacity, ChannelState, InputCovariance, NoiseSpec};

fn main() -> mimo_cr::error::Result<()> {
    let g = ChannelState::diag(&[2.0, 1.0]);
    let noise = NoiseSpec::new(1.0)?;
    let (q, cap) = waterfilling_capacity(&g, 1.0, &noise)?;
    println!("water-filling powers {:?} -> {cap:.4} bits", q.eigenvalues());
    let iso = InputCovariance::isotropic(2, 1.0)?;
    println!("isotropic input -> {:.4} bits", log_det_mi(&g, &iso, &noise)?);
    println!("operator norm {:.4}", operator_norm(&g));
    Ok(())
}
