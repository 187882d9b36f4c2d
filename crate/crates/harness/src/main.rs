use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harness::commands::{self, RunOptions};
use harness::{CliResult, LoadedConfig};

#[derive(Parser)]
#[command(name = "harness", version, about = "Prompt-consistency runs for in-context learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render every prompt of the factorial design.
    Generate(Common),
    /// Collect predictions from the configured backend.
    Run {
        #[command(flatten)]
        common: Common,
        /// Keep existing predictions and answer only the remaining prompts.
        #[arg(long)]
        resume: bool,
        /// Stop after this many new predictions.
        #[arg(long, hide = true)]
        max_prompts: Option<usize>,
    },
    /// Compute metrics and write reports.
    Score {
        #[command(flatten)]
        common: Common,
        /// Score even when some predictions are missing; gaps are masked.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Probe every template on one setup and rank them.
    RankTemplates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Check every generated prompt against its setup's constraints.
    Validate(Common),
}

fn execute(command: Command) -> CliResult<bool> {
    match command {
        Command::Generate(c) => {
            let cfg = LoadedConfig::load(&c.config)?;
            let s = commands::generate(&cfg)?;
            println!("generated {} prompts for {} setups in {}", s.prompts, s.setups, cfg.output_dir().display());
        }
        Command::Run { common, resume, max_prompts } => {
            let cfg = LoadedConfig::load(&common.config)?;
            let s = commands::run(&cfg, &RunOptions { resume, max_prompts })?;
            println!(
                "{} prompts: {} already answered, {} attempted, {} answered, {} unanswered",
                s.prompts, s.skipped, s.attempted, s.answered, s.unanswered
            );
        }
        Command::Score { common, allow_partial } => {
            let cfg = LoadedConfig::load(&common.config)?;
            let s = commands::score(&cfg, allow_partial)?;
            println!(
                "scored {} setups x {} data points: mean accuracy {:.4}, kappa_avg {:.4}, c_pi {}, masked {}, missing {}",
                s.setups, s.data_points, s.mean_accuracy, s.kappa_avg, s.c_pi, s.masked, s.missing
            );
            if s.single_label_bias {
                println!("warning: {}", commands::BIAS_WARNING);
            }
        }
        Command::RankTemplates { common, resume } => {
            let cfg = LoadedConfig::load(&common.config)?;
            let s = commands::rank_templates(&cfg, &RunOptions { resume, max_prompts: None })?;
            for (i, t) in s.ranking.ranking.iter().enumerate() {
                println!("{:>2}. [{:02}] {:<34} acc {:.4}  c_lambda {:.4}", i + 1, t.template_id, t.name, t.accuracy, t.c_lambda);
            }
            println!("high: {:?}  low: {:?}", s.ranking.high, s.ranking.low);
        }
        Command::Validate(c) => {
            let cfg = LoadedConfig::load(&c.config)?;
            let report = commands::validate(&cfg)?;
            println!("{} prompts, {} violations", report.prompts, report.violations.len());
            for v in report.violations.iter().take(50) {
                println!("  ({}, {}): {}", v.setup_id, v.data_id, v.message);
            }
            return Ok(report.violations.is_empty());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
