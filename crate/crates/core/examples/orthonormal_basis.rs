//! Orthonormal polynomials for a correlated, bimodal density, built from its
//! moments alone.
//!
//! cargo run --release --example orthonormal_basis [order]

use ngcolloc::{synthetic, BasisSet};

fn main() -> ngcolloc::Result<()> {
    let order: u32 = match std::env::args().nth(1) {
        Some(s) => s.parse().map_err(|_| ngcolloc::Error::Config(format!("bad order {s:?}")))?,
        None => 3,
    };
    let basis = BasisSet::for_density(&synthetic::density(), order)?;
    println!("{} basis functions of total degree <= {order}", basis.len());
    println!("max |E[Psi_i Psi_j] - delta_ij| = {:.2e}", basis.orthonormality_error(order)?);
    println!("scaled Gram condition number = {:.2e}", basis.gram_condition());

    // Psi_j = sum_i R[j, i] x^alpha_i; print the first few.
    let r = basis.coeffs();
    for (j, alpha) in basis.indices().iter().enumerate().take(6) {
        let terms: Vec<String> = basis
            .indices()
            .iter()
            .enumerate()
            .filter(|(i, _)| r[(j, *i)] != 0.0)
            .map(|(i, a)| format!("{:+.3e} x^{a:?}", r[(j, i)]))
            .collect();
        println!("Psi_{j} (leading {alpha:?}) = {}", terms.join(" "));
    }
    let x = [0.05, -0.1];
    println!("Psi at {x:?}: {:?}", basis.eval(&x, order)?);
    Ok(())
}
