use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metasharp::meta::AdaptMode;
use metasharp_cli::commands::{cmd_bounds, cmd_compare, cmd_sweep, cmd_train, sweep_argmin};
use metasharp_cli::config::{load, Overrides};
use metasharp_cli::CliError;

#[derive(Debug, Parser)]
#[command(name = "metasharp", version, about = "Sharpness-aware meta-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Run seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Inner adaptation mode: per_task_clone or sequential_literal.
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Worker threads for per-task evaluation and sweep cells.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write params, trace and manifest.
    Train,
    /// One run per (delta, alpha) grid point, aggregated into sweep.csv.
    Sweep,
    /// Equal-budget runs of several algorithms on the same episodes.
    Compare,
    /// Evaluate convergence, lemma and PAC-Bayes bounds on a recorded trace.
    Bounds {
        /// Trace CSV written by `train`.
        #[arg(long)]
        trace: PathBuf,
        /// Uniform-stability constant (overrides `bounds.u`).
        #[arg(long)]
        u: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mode = cli
        .mode
        .as_deref()
        .map(|m| m.parse::<AdaptMode>())
        .transpose()
        .map_err(|e| CliError::Config(format!("--mode: {e}")))?;
    let ov = Overrides {
        out: cli.out,
        seed: cli.seed,
        mode,
        threads: cli.threads,
    };
    let cfg = load(&config, &ov)?;
    match cli.command {
        Command::Train => {
            let o = cmd_train(&cfg)?;
            println!(
                "trained {} iterations{}; query loss {:.6}; outputs in {}",
                o.trace.reports.len(),
                if o.trace.truncated {
                    " (task stream exhausted)"
                } else {
                    ""
                },
                o.metrics.query_loss,
                o.dir.display()
            );
        }
        Command::Sweep => {
            let rows = cmd_sweep(&cfg)?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            println!("sweep: {} cells, {failed} failed", rows.len());
            if let Some(i) = sweep_argmin(&rows) {
                println!(
                    "best cell: delta={} alpha={} ({})",
                    rows[i].delta, rows[i].alpha, rows[i].dir
                );
            }
        }
        Command::Compare => {
            let r = cmd_compare(&cfg)?;
            for a in &r.algorithms {
                println!(
                    "{:<10} median query loss {:.6}  median step {} ns",
                    a.name, a.median_query_loss, a.median_step_ns
                );
            }
        }
        Command::Bounds { trace, u } => {
            let r = cmd_bounds(&cfg, &trace, u)?;
            for rec in &r.records {
                match rec.margin {
                    Some(m) => println!("{:<10} rhs {:.6e}  margin {:.6e}", rec.name, rec.rhs, m),
                    None => println!("{:<10} rhs {:.6e}", rec.name, rec.rhs),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
