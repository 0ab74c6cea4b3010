use std::path::PathBuf;
use std::process::ExitCode;

use cai_core::dist::PolicyTable;
use cai_core::env::builtin;
use cai_core::harness::{self, ExperimentConfig, Quadrant};
use cai_core::{CaiError, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cai", version = harness::VERSION, about = "Control-as-inference experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dot-path override such as `params.mpc.n_samples=128`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact posterior, evidence and ELBO for a small tabular env.
    Oracle {
        #[arg(long)]
        env: String,
        #[arg(long)]
        beta: f64,
        /// JSON policy table to score instead of the soft-optimal one.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// List registered algorithms by quadrant.
    Quadrants {
        #[arg(long)]
        json: bool,
        #[arg(long)]
        quadrant: Option<String>,
    },
    /// List built-in environments.
    Envs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, mut set, seed, out } => {
            if let Some(seed) = seed {
                set.push(format!("seed={seed}"));
            }
            let config = ExperimentConfig::load(&config, &set)?;
            let dir = out
                .or_else(|| config.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}-{}", config.algorithm, config.env_id, config.seed)));
            let res = harness::run(&config, &dir)?;
            println!("{}", serde_json::to_string_pretty(&res)?);
        }
        Command::Oracle { env, beta, policy } => {
            let table = match policy {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CaiError::Validation(format!("cannot read {}: {e}", path.display())))?;
                    let t: PolicyTable = serde_json::from_str(&text)
                        .map_err(|e| CaiError::Validation(format!("bad policy table: {e}")))?;
                    Some(t)
                }
                None => None,
            };
            let report = harness::oracle(&env, beta, table.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Quadrants { json, quadrant } => {
            let filter = quadrant
                .map(|q| {
                    Quadrant::parse(&q).ok_or_else(|| {
                        let names: Vec<_> = Quadrant::ALL.iter().map(|q| q.label()).collect();
                        CaiError::Validation(format!("unknown quadrant {q:?}; expected one of {}", names.join(", ")))
                    })
                })
                .transpose()?;
            let rows = harness::quadrant_report(filter);
            if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                print!("{}", harness::quadrant_table(&rows));
            }
        }
        Command::Envs => {
            for (id, description) in builtin::list() {
                println!("{id:<24} {description}");
            }
        }
    }
    Ok(())
}
