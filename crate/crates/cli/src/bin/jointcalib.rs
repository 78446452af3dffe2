use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use jointcalib_cli::commands::{run, Command};
use jointcalib_cli::config::RunConfig;
use jointcalib_cli::error::CliError;

/// Joint camera-intrinsic and LiDAR-camera extrinsic calibration.
#[derive(Debug, Parser)]
#[command(name = "jointcalib", version)]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation, RANSAC and subset sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = (|| -> Result<String, CliError> {
        let cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => {
                let cfg = RunConfig::default();
                cfg.validate()?;
                cfg
            }
        };
        run(&cli.command, &cfg, cli.seed)
    })();
    match outcome {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code as u8)
        }
    }
}
