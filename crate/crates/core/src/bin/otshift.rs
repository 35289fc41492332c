use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use otshift::error::Result;
use otshift::experiment::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "otshift", version, about = "Label-shift estimation and domain-adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Validate a `label,f0,...` feature CSV and summarize it.
    Ingest {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    let cfg = match experiment::seed_from_env()? {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let artifacts = experiment::run(&cfg)?;
            for f in artifacts.files {
                println!("{}", f.display());
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("ok: {:?} -> {}", cfg.experiment, cfg.output_dir.display());
        }
        Command::Ingest { features, out } => {
            let summary = experiment::ingest(&features, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(experiment::exit_code(&err) as u8)
        }
    }
}
