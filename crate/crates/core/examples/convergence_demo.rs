//! The full benchmark: rules for p = 1..4 at three tolerances, written to an
//! output directory together with a convergence table.
//!
//! cargo run --release --example convergence_demo [out_dir]

use std::path::PathBuf;

use ngcolloc::pipeline::{cmd_demo, Overrides, ProjectConfig};

fn main() -> ngcolloc::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("ngcolloc-demo"), PathBuf::from);
    let rc = ProjectConfig::default().resolve(
        &Overrides {
            out: Some(out),
            ..Overrides::default()
        },
        None,
    )?;
    let report = cmd_demo(&rc)?;
    println!("{report}");
    println!("output: {}", rc.out_dir.display());
    Ok(())
}
