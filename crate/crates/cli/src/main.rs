use std::path::PathBuf;
use std::process::ExitCode;

use adar_cli::commands::{self, read_embeddings};
use adar_cli::{CliError, CliResult};
use adar_core::data::Format;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adar",
    version,
    about = "Diffusion-augmented negative sampling for implicit-feedback recommenders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an interaction file into train.tsv / test.tsv with id maps.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "tsv")]
        format: Format,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train and write metrics.json, losses.csv and checkpoints to out_dir.
    Train { config: PathBuf },
    /// Evaluate a saved encoder on the configured test split.
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every point of lambda_grid x T_grid and write sweep.csv.
    Sweep {
        config: PathBuf,
        /// Run grid points concurrently; each point's result is unchanged.
        #[arg(long)]
        parallel: bool,
    },
    /// Run the numerical property battery.
    Verify {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Write users.emb and items.emb from an encoder checkpoint.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare {
            input,
            format,
            ratio,
            seed,
            out_dir,
        } => {
            let s = commands::cmd_prepare(&input, format, ratio, seed, &out_dir)?;
            println!(
                "{} users, {} items, {} train / {} test interactions -> {}",
                s.n_users,
                s.n_items,
                s.n_train,
                s.n_test,
                out_dir.display()
            );
        }
        Command::Train { config } => {
            let art = commands::cmd_train(&config)?;
            println!("epochs {}", art.epochs_run);
            println!("{}", art.metrics.to_json());
        }
        Command::Eval { config, checkpoint } => {
            let report = commands::cmd_eval(&config, checkpoint.as_deref())?;
            println!("{}", report.to_json());
        }
        Command::Sweep { config, parallel } => {
            let out = commands::cmd_sweep(&config, parallel)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for r in &out.rows {
                match &r.outcome {
                    Ok(m) => println!("lambda={} T={} {}", r.lambda, r.steps, m.to_json()),
                    Err(e) => println!("lambda={} T={} error: {e}", r.lambda, r.steps),
                }
            }
        }
        Command::Verify { seed } => {
            let results = commands::cmd_verify(seed)?;
            for r in &results {
                println!("{r}");
            }
            let failed: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.name.as_str())
                .collect();
            if !failed.is_empty() {
                return Err(CliError::other(format!(
                    "failed checks: {}",
                    failed.join(", ")
                )));
            }
        }
        Command::ExportEmbeddings {
            checkpoint,
            out_dir,
        } => {
            commands::cmd_export_embeddings(&checkpoint, &out_dir)?;
            for name in [commands::USERS_EMB, commands::ITEMS_EMB] {
                let path = out_dir.join(name);
                let t = read_embeddings(&path)?;
                println!("{} rows={} dim={}", path.display(), t.rows, t.dim);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
