use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use transfer_bo::commands::{families_list, parse_timing_grid, slope_table, timing, verify};
use transfer_bo::{run_experiment, ExperimentConfig};
use transfer_gp::oracles::VerifyScope;

#[derive(Parser)]
#[command(name = "transfer-bo", version, about = "Transfer-learning Bayesian optimization experiments")]
struct Cli {
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for independent runs.
    #[arg(long, global = true, env = "TRANSFER_BO_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the seed x model x task grid of a TOML configuration.
    Run { config: PathBuf },
    /// Run verification suites; exits nonzero on any failed check.
    Verify {
        #[arg(long = "scope", value_parser = parse_scope, default_value = "all")]
        scopes: Vec<VerifyScope>,
    },
    /// Time one training step per model over a source-size grid.
    Timing {
        /// TOML file or inline `kinds=..;source_points=..;target_points=..;reps=..`.
        grid: String,
    },
    /// Function families.
    Families {
        #[command(subcommand)]
        action: FamiliesAction,
    },
}

#[derive(Subcommand)]
enum FamiliesAction {
    List,
}

fn parse_scope(s: &str) -> Result<VerifyScope, String> {
    s.parse().map_err(|e: transfer_gp::Error| e.to_string())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = cli.seed {
                cfg.master_seed = s;
            }
            let out = cli
                .out
                .or_else(|| cfg.output_dir.clone())
                .context("no output directory: pass --out or set output_dir")?;
            let outcome = run_experiment(&cfg, &out, jobs)?;
            for m in &outcome.summary.models {
                let last = m.mean_regret.last().copied().unwrap_or(f64::NAN);
                let sem = m.sem_regret.last().copied().unwrap_or(f64::NAN);
                println!("{:<6} runs {:>3}  failed {:>3}  final regret {last:.4} +/- {sem:.4}", m.model.name(), m.runs, m.failed_runs);
            }
            for f in &outcome.summary.failures {
                eprintln!("failed: {} task {} seed {}: {}", f.model, f.task, f.seed, f.message);
            }
            println!("{} runs ({} resumed), {} failed; output in {}", outcome.total, outcome.resumed, outcome.failed, out.display());
            Ok(if outcome.is_failure() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Verify { scopes } => {
            let report = verify(&scopes, cli.seed.unwrap_or(0))?;
            for c in &report.checks {
                println!("{c}");
            }
            if let Some(dir) = cli.out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("verification.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            }
            let failed = report.failures().count();
            println!("{} checks, {} failed", report.checks.len(), failed);
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Timing { grid } => {
            let mut cfg = parse_timing_grid(&grid)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let report = timing(&cfg, cli.out.as_deref())?;
            print!("{}", slope_table(&report));
            Ok(ExitCode::SUCCESS)
        }
        Command::Families { action: FamiliesAction::List } => {
            print!("{}", families_list());
            Ok(ExitCode::SUCCESS)
        }
    }
}
