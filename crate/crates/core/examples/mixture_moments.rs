//! Exact raw moments of a Gaussian mixture next to Monte Carlo estimates.
//!
//! cargo run --release --example mixture_moments

use ngcolloc::{synthetic, MultiIndexSet};

fn main() -> ngcolloc::Result<()> {
    let g = synthetic::density();
    println!("mixture with {} components in {} dimensions", g.num_components(), g.dim());
    let alphas: Vec<Vec<u32>> = MultiIndexSet::new(2, 4)?.iter().map(|a| a.to_vec()).collect();
    let mc = g.mc_moments(&alphas, 1_000_000, 1)?;
    println!("{:>8} {:>14} {:>14} {:>10}", "alpha", "exact", "monte carlo", "z");
    for (alpha, (est, se)) in alphas.iter().zip(mc) {
        let exact = g.moment(alpha)?;
        let z = if se > 0.0 { (exact - est) / se } else { 0.0 };
        println!("{:>8} {exact:>14.6e} {est:>14.6e} {z:>10.2}", format!("{alpha:?}"));
    }
    Ok(())
}
