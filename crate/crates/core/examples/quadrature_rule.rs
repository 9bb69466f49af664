//! Builds quadrature rules of increasing order and shows how many nodes each
//! needs, plus the construction log for the last one.
//!
//! cargo run --release --example quadrature_rule

use ngcolloc::pipeline::build_for;
use ngcolloc::{num_terms, synthetic, SolverConfig};

fn main() -> ngcolloc::Result<()> {
    let g = synthetic::density();
    let cfg = SolverConfig::default();
    let mut last_log = Vec::new();
    for p in 1..=3 {
        let (_, rule, log) = build_for(&g, p, &cfg)?;
        println!(
            "p={p}: {} nodes (N_p = {}, N_2p = {}), l1 residual {:.2e}",
            rule.len(),
            num_terms(2, p),
            num_terms(2, 2 * p),
            rule.residual_l1()
        );
        last_log = log;
        if p == 3 {
            for k in 0..rule.len() {
                let x = rule.node(k);
                println!("  node {:>2}: ({:+.5}, {:+.5})  weight {:.5}", k + 1, x[0], x[1], rule.weights()[k]);
            }
        }
    }
    println!("construction log for p=3:");
    for e in last_log {
        println!(
            "  {:<9} M={:>2} residual {:.2e} after {} iterations{}",
            e.phase,
            e.nodes,
            e.residual_l1,
            e.iterations,
            if e.converged { "" } else { " (not converged)" }
        );
    }
    Ok(())
}
