use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use imgopt::experiment::{self, RunConfig};
use imgopt::metrics::write_front_csv;

#[derive(Parser)]
#[command(
    name = "imgopt",
    version,
    about = "Run and summarize multi-objective diffusion experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config (completed seeds are skipped).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; defaults to the config's `out`, then $IMGOPT_OUT, then ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate completed runs into a checkpoint table and mean curves.
    Summarize {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Evaluation checkpoints (comma separated); defaults to budget / 2^k.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<u64>>,
    },
    /// Pareto-front report for the algorithms under a run root.
    Fronts {
        #[arg(long = "in")]
        input: PathBuf,
        /// Pool the final solutions of all algorithms per seed and count each
        /// algorithm's share of the combined front.
        #[arg(long)]
        combined: bool,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, seed, out } => {
            let cfg = RunConfig::load(&config)?;
            let exp = cfg
                .build()
                .with_context(|| format!("invalid config {}", config.display()))?;
            let root = experiment::resolve_out(out.as_deref(), &cfg);
            let summary = exp.run_all(&root, seed)?;
            print!("{}", experiment::format_table(&[summary]));
            println!("outputs in {}", root.join(cfg.label()).display());
        }
        Command::Summarize {
            inputs,
            out,
            checkpoints,
        } => {
            let table = experiment::summarize(&inputs, &out, checkpoints.as_deref())?;
            print!("{}", experiment::format_table(&table));
            println!("table written to {}", out.display());
        }
        Command::Fronts { input, combined } => {
            if combined {
                let reports = experiment::combined_fronts(&input)?;
                if reports.is_empty() {
                    bail!(
                        "no seed was completed by every algorithm under {}",
                        input.display()
                    );
                }
                for (seed, c) in &reports {
                    println!(
                        "seed {seed}: combined front {} points, hypervolume {:.4}",
                        c.front_size, c.hypervolume
                    );
                    for (label, k) in &c.counts {
                        println!("  {label:<16} {k}");
                    }
                    let path = input.join(format!("combined_front_seed_{seed}.csv"));
                    write_front_csv(&path, &c.front)?;
                }
            } else {
                for run in experiment::discover(&input)? {
                    let s = &run.summary;
                    println!(
                        "{:<16} seed {:<4} front {:>3}  hypervolume {:.4}",
                        s.label, s.seed, s.front_size, s.final_hypervolume
                    );
                }
            }
        }
    }
    Ok(())
}
