use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ngcolloc::pipeline::{self, Overrides, ProjectConfig, OUT_ENV};

/// Stochastic collocation for Gaussian-mixture parameter densities.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the orthonormal basis and report its orthonormality.
    Basis(Common),
    /// Build the quadrature rule and the sample file for simulators.
    Quad(Common),
    /// Fit surrogates from simulator results at the rule nodes.
    Fit(Common),
    /// Mean, variance and output PDFs of fitted surrogates.
    Stats(Common),
    /// Run the synthetic benchmark for p = 1..4 at three tolerances.
    Demo(Common),
}

#[derive(Args)]
struct Common {
    /// Project file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// l1 moment-residual tolerance of the quadrature rule.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Expansion order p.
    #[arg(long)]
    order: Option<u32>,
    /// Output directory; defaults to the project file's `out_dir`, then
    /// $NGCOLLOC_OUT, then ./ngcolloc-out.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> ngcolloc::Result<String> {
    let (common, name) = match &cli.command {
        Cmd::Basis(c) => (c, "basis"),
        Cmd::Quad(c) => (c, "quad"),
        Cmd::Fit(c) => (c, "fit"),
        Cmd::Stats(c) => (c, "stats"),
        Cmd::Demo(c) => (c, "demo"),
    };
    let cfg = match &common.config {
        Some(path) => ProjectConfig::load(path).map_err(|e| e.in_stage("config"))?,
        None if name == "demo" => ProjectConfig::default(),
        None => {
            return Err(ngcolloc::Error::Config(format!("`{name}` needs --config")).in_stage("config"));
        }
    };
    let overrides = Overrides {
        seed: common.seed,
        epsilon: common.epsilon,
        order: common.order,
        out: common.out.clone(),
    };
    let rc = cfg
        .resolve(&overrides, std::env::var_os(OUT_ENV).map(PathBuf::from))
        .map_err(|e| e.in_stage("config"))?;
    let summary = match cli.command {
        Cmd::Basis(_) => pipeline::cmd_basis(&rc)?.to_string(),
        Cmd::Quad(_) => pipeline::cmd_quad(&rc)?.to_string(),
        Cmd::Fit(_) => pipeline::cmd_fit(&rc)?.to_string(),
        Cmd::Stats(_) => pipeline::cmd_stats(&rc)?.to_string(),
        Cmd::Demo(_) => pipeline::cmd_demo(&rc)?.to_string(),
    };
    Ok(format!("{summary}\noutput: {}", rc.out_dir.display()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
