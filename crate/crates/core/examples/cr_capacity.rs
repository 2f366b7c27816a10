//! CR capacity of a doubly symmetric binary source over a grid of
//! communication rates, with the grid search and the dual bound beside it.

use mimo_cr::cr::{cr_capacity_bruteforce, cr_curve, cr_dual_bound_binary, CrOptions, JointSource};

fn main() -> mimo_cr::error::Result<()> {
    let src = JointSource::dsbs(0.1)?;
    let grid: Vec<f64> = (0..=8).map(|i| i as f64 * src.h_x_given_y() / 8.0).collect();
    println!("H(X) = {:.4}, H(X|Y) = {:.4}", src.h_x(), src.h_x_given_y());
    println!("c,optimizer,grid_search,dual_bound");
    for p in cr_curve(&src, &grid, &CrOptions::default())? {
        let brute = cr_capacity_bruteforce(&src, p.comm_rate_c, 0.02, None)?.cr_rate;
        let dual = cr_dual_bound_binary(&src, p.comm_rate_c, 20_001)?;
        println!("{:.4},{:.5},{:.5},{:.5}", p.comm_rate_c, p.cr_rate, brute, dual);
    }
    Ok(())
}
