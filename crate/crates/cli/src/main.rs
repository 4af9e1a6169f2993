//! `robustmon`: drives the testbench pipeline from a JSON config.
//!
//! Exit codes: 0 success, 1 pipeline failure, 2 config error,
//! 3 upstream artifacts missing, 4 acceptance-check failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use robustmon_cli::stages::{self, Ctx, StageOutcome};
use robustmon_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "robustmon",
    version,
    about = "Robustness testbench for ML safety monitors in a closed-loop insulin pump",
    after_help = "Exit codes: 0 success, 1 pipeline failure, 2 config error, \
                  3 upstream artifacts missing, 4 acceptance-check failure."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct StageArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Recompute even when cached outputs are up to date.
    #[arg(long)]
    force: bool,
    /// Output directory; overrides the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the corpus seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the closed-loop trace corpus.
    Simulate(StageArgs),
    /// Build the windowed dataset and train all monitors.
    Train(StageArgs),
    /// Craft Gaussian, white-box, and black-box perturbed sets.
    Attack(StageArgs),
    /// Score monitors clean and perturbed; emit reports and matrices.
    Evaluate(StageArgs),
    /// Run all stages, then write the acceptance snapshot.
    Reproduce {
        #[command(flatten)]
        args: StageArgs,
        /// Exit 4 unless every run-level acceptance criterion passes.
        #[arg(long)]
        check: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn ctx_from(args: &StageArgs) -> Result<Ctx, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.corpus.seed = seed;
    }
    Ok(Ctx::new(cfg, args.out.clone(), args.force))
}

fn print_outcome(outcome: &StageOutcome) {
    if outcome.ran {
        println!("{}: {} ({:.1}s)", outcome.stage, outcome.summary, outcome.wall_ms as f64 / 1000.0);
    } else {
        println!("{}: up to date", outcome.stage);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Simulate(args) => print_outcome(&stages::cmd_simulate(&ctx_from(&args)?)?),
        Cmd::Train(args) => print_outcome(&stages::cmd_train(&ctx_from(&args)?)?),
        Cmd::Attack(args) => print_outcome(&stages::cmd_attack(&ctx_from(&args)?)?),
        Cmd::Evaluate(args) => print_outcome(&stages::cmd_evaluate(&ctx_from(&args)?)?),
        Cmd::Reproduce { args, check } => {
            let ctx = ctx_from(&args)?;
            let (outcomes, summary) = stages::cmd_reproduce(&ctx)?;
            for outcome in &outcomes {
                print_outcome(outcome);
            }
            for c in &summary.criteria {
                println!(
                    "criterion {}: {} - {} ({})",
                    c.id,
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.details
                );
            }
            if check && !summary.all_pass {
                let failed = summary.criteria.iter().filter(|c| !c.pass).count();
                return Err(CliError::Acceptance { failed, total: summary.criteria.len() });
            }
        }
    }
    Ok(())
}
