use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use w2sg_core::pipeline::{self, RunConfig, TrainStage, W2sReport};
use w2sg_core::EvalReport;

/// Weak-to-strong trajectory pipeline on toy text environments.
#[derive(Debug, Parser)]
#[command(name = "w2sg", version)]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reuse stage artifacts that already exist in the output directory.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample M weak-policy rollouts per instruction.
    Explore,
    /// Merge each instruction's explorations into a trajectory tree.
    BuildTree,
    /// Extract preference pairs at tree divergence points.
    ExtractPairs,
    /// Run offline MCTS on each tree and extract optimal paths.
    Mcts,
    /// Train one policy stage.
    Train {
        /// weak-sft, explore-refine, tree-dpo, mcts-sft, strong-sft or ceiling
        #[arg(long)]
        stage: TrainStage,
    },
    /// Evaluate a saved policy checkpoint.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        /// Report name under eval/; defaults to the checkpoint's file stem.
        #[arg(long)]
        label: Option<String>,
    },
    /// Train the expert-preference ceiling policy.
    Ceiling,
    /// Run the full loop and write the comparison report.
    W2s,
    /// Run the full loop once per exploration breadth.
    SweepBreadth {
        /// Comma-separated breadth values.
        #[arg(long = "m", value_delimiter = ',', required = true)]
        ms: Vec<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig {
            base_dir: std::env::current_dir()?,
            ..RunConfig::default()
        },
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        // command-line paths are relative to the working directory
        config.out_dir = std::path::absolute(out)?;
    }
    config.validate()?;
    Ok(config)
}

fn print_eval(label: &str, r: &EvalReport) {
    println!("{label}: expected_score={:.6} success_rate={:.6}", r.expected_score, r.success_rate);
}

fn print_report(r: &W2sReport) {
    println!("{:<14} {:>14} {:>12}", "method", "expected_score", "success_rate");
    for row in &r.rows {
        println!("{:<14} {:>14.6} {:>12.6}", row.method, row.expected_score, row.success_rate);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let out = config.output_dir();
    info!("writing to {}", out.display());
    match &cli.command {
        Command::Explore => {
            let explored = pipeline::cmd_explore(&config, cli.resume)?;
            let n: usize = explored.values().map(Vec::len).sum();
            println!("{n} trajectories over {} instructions", explored.len());
        }
        Command::BuildTree => {
            for tree in pipeline::cmd_build_tree(&config, cli.resume)? {
                let s = w2sg_core::tree_stats(&tree);
                println!(
                    "{}: nodes={} breadth={} depth={} divergence_points={}",
                    tree.instruction().id,
                    tree.len(),
                    s.breadth,
                    s.depth,
                    s.divergence_points
                );
            }
        }
        Command::ExtractPairs => {
            let pairs = pipeline::cmd_extract_pairs(&config, cli.resume)?;
            println!("{} preference pairs", pairs.count());
        }
        Command::Mcts => {
            for path in pipeline::cmd_mcts(&config, cli.resume)? {
                println!("{}: {} steps, score {}", path.instruction.id, path.len(), path.score);
            }
        }
        Command::Train { stage } => {
            let policy = pipeline::cmd_train(&config, *stage, cli.resume)?;
            println!("{stage}: trained {} contexts", policy.num_contexts());
        }
        Command::Eval { policy, label } => {
            let label = match label {
                Some(l) => l.clone(),
                None => policy
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .context("cannot derive a label from the policy path; pass --label")?
                    .to_string(),
            };
            let report = pipeline::cmd_eval(&config, policy, &label)?;
            print_eval(&label, &report);
        }
        Command::Ceiling => {
            let policy = pipeline::cmd_ceiling(&config, cli.resume)?;
            println!("ceiling: trained {} contexts", policy.num_contexts());
        }
        Command::W2s => print_report(&pipeline::cmd_w2s(&config, cli.resume)?),
        Command::SweepBreadth { ms } => {
            let sweep = pipeline::cmd_sweep_breadth(&config, ms, cli.resume)?;
            print!("{}", sweep.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
