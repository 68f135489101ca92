use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use verifem::config::parse_config;
use verifem::runner::{run, Command as PipelineCommand};

/// Finite element verification toolkit: solve 2D diffusion problems and
/// certify their discretization error.
#[derive(Parser)]
#[command(name = "verifem", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and export the solution.
    Solve(CommonArgs),
    /// Solve, then run the configured error estimators and goal bounds.
    Estimate(CommonArgs),
    /// Run the adaptive solve -> estimate -> mark -> refine loop.
    Adapt(CommonArgs),
    /// Uniform or adaptive convergence study with rate fits.
    Study(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the INI-style run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out` key).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (pipeline, args) = match &cli.command {
        Command::Solve(a) => (PipelineCommand::Solve, a),
        Command::Estimate(a) => (PipelineCommand::Estimate, a),
        Command::Adapt(a) => (PipelineCommand::Adapt, a),
        Command::Study(a) => (PipelineCommand::Study, a),
    };
    let config = match parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("verifem: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(pipeline, &config, args.out.clone()) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("verifem: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
