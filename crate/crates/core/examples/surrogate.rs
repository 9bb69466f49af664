//! Fits a surrogate of a smooth response from quadrature samples and compares
//! its statistics with brute-force sampling of the response itself.
//!
//! cargo run --release --example surrogate

use ngcolloc::collocation::{certificate, fit};
use ngcolloc::density::mean_and_standard_error;
use ngcolloc::pipeline::build_for;
use ngcolloc::{synthetic, SolverConfig};

fn main() -> ngcolloc::Result<()> {
    let g = synthetic::density();
    let (basis, rule, _) = build_for(&g, 3, &SolverConfig::default())?;
    let ys: Vec<f64> = (0..rule.len()).map(|k| synthetic::response(&rule.node(k))).collect();
    let model = fit(&basis, &rule, &ys)?.with_name("y");
    let (mean, var) = model.mean_variance();
    println!("surrogate from {} simulations: mean {mean:.10}, variance {var:.6e}", rule.len());

    let xs = g.sample(1_000_000, 2)?;
    let direct: Vec<f64> = (0..xs.nrows()).map(|i| synthetic::response(&[xs[(i, 0)], xs[(i, 1)]])).collect();
    let (mc, se) = mean_and_standard_error(&direct);
    println!("Monte Carlo from 1e6 simulations: mean {mc:.10} +- {se:.1e}");
    println!("closed-form mean: {:.10}", synthetic::exact_mean(&g));

    let cert = certificate(&basis, &rule, basis.moments())?;
    println!(
        "discrete Gram deviation {:.2e} (bound {:.2e}, holds: {})",
        cert.gram_deviation,
        cert.bound,
        cert.holds()
    );

    let pdf = model.pdf_estimate(&g, 200_000, 3, 40)?;
    println!("output density (histogram, bandwidth {:.2e}):", pdf.bandwidth);
    let peak = pdf.density.iter().cloned().fold(0.0, f64::max);
    for (i, h) in pdf.density.iter().enumerate().step_by(2) {
        let bar = "#".repeat((50.0 * h / peak).round() as usize);
        println!("  {:>8.4} {bar}", 0.5 * (pdf.edges[i] + pdf.edges[i + 1]));
    }
    Ok(())
}
