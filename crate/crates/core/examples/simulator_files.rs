//! The file-based simulator hand-off: write the nodes, let an external
//! program fill in outputs, read them back and fit.
//!
//! cargo run --release --example simulator_files

use std::fmt::Write as _;

use ngcolloc::collocation::fit;
use ngcolloc::pipeline::build_for;
use ngcolloc::simbridge::{emit_samples, ingest_results};
use ngcolloc::{synthetic, SolverConfig};

fn main() -> ngcolloc::Result<()> {
    let g = synthetic::density();
    let (basis, rule, _) = build_for(&g, 2, &SolverConfig::default())?;
    let dir = std::env::temp_dir().join(format!("ngcolloc-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    let samples = dir.join("samples.csv");
    emit_samples(&rule, &samples)?;
    println!("wrote {}:\n{}", samples.display(), std::fs::read_to_string(&samples)?);

    // Stand-in for the external simulator: append an output column.
    let mut filled = String::new();
    for line in std::fs::read_to_string(&samples)?.lines() {
        if line.starts_with('#') {
            writeln!(filled, "{line}").unwrap();
        } else if line.starts_with("id") {
            writeln!(filled, "{line},y").unwrap();
        } else {
            let x: Vec<f64> = line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
            writeln!(filled, "{line},{:e}", synthetic::response(&x)).unwrap();
        }
    }
    let results = dir.join("results.csv");
    std::fs::write(&results, filled)?;

    let batch = ingest_results(&rule, &results)?;
    let model = fit(&basis, &rule, &batch.column(0))?;
    let (mean, var) = model.mean_variance();
    println!("mean {mean:.8}, variance {var:.4e}");
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
