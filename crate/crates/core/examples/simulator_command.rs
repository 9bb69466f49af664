//! Runs a shell command once per quadrature node, in parallel, and fits one
//! surrogate per output column.
//!
//! cargo run --release --example simulator_command

use ngcolloc::collocation::fit_columns;
use ngcolloc::pipeline::build_for;
use ngcolloc::simbridge::{run_command, CommandSpec};
use ngcolloc::{synthetic, SolverConfig};

fn main() -> ngcolloc::Result<()> {
    let g = synthetic::density();
    let (basis, rule, _) = build_for(&g, 2, &SolverConfig::default())?;
    let mut spec = CommandSpec::new(
        "awk -v a={x1} -v b={x2} 'BEGIN { printf \"%.17g,%.17g\\n\", exp(a) + 0.1 * cos(a) * sin(b), a * b }'",
    );
    spec.parallelism = 4;
    let batch = run_command(&rule, &spec)?;
    println!("{} runs, columns {:?}", batch.len(), batch.columns);
    for model in fit_columns(&basis, &rule, &batch.columns, &batch.values)? {
        let (mean, var) = model.mean_variance();
        println!("{}: mean {mean:+.8e}, variance {var:.4e}", model.name());
    }
    Ok(())
}
