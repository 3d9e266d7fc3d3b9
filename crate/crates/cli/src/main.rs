//! `replay-dagger`: scenario generation, single plans, evaluation, full
//! training runs, and SVG rendering.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use replay_dagger::dataset::ScenarioKind;

#[derive(Parser, Debug)]
#[command(name = "replay-dagger", version, about = "Log-replay driving simulation with a search-based pseudo-expert")]
pub struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic scene (tracks.csv and map.json).
    Gen(GenArgs),
    /// Run the pseudo-expert once from a logged state and print the plan as JSON.
    Plan(PlanArgs),
    /// Roll out the nearest-neighbour policy and print the outcome table.
    Eval(EvalArgs),
    /// Run the aggregation loop and write the report, checkpoints, and curve.
    Dagger(DaggerArgs),
    /// Draw a rollout or a plan over its scene as SVG.
    Render(RenderArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Roundabout,
    Intersection,
    Merging,
}

impl From<KindArg> for ScenarioKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Roundabout => ScenarioKind::Roundabout,
            KindArg::Intersection => ScenarioKind::Intersection,
            KindArg::Merging => ScenarioKind::Merging,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    KFailure,
    Adversary,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 12)]
    pub vehicles: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Scene directory holding tracks.csv and map.json.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub track: u32,
    /// Frame index within the track.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also draw the plan to this file.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Training set (JSONL) for the policy; the logged samples are used when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write the metrics JSON here as well.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write every rollout as JSONL.
    #[arg(long)]
    pub rollouts: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DaggerArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Output directory (defaults to `output_dir` from the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Frames before a failure to label (k-failure only).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Continue from a checkpoint directory written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Rollout JSONL written by `eval --rollouts`.
    #[arg(long, conflicts_with = "plan", required_unless_present = "plan")]
    pub rollouts: Option<PathBuf>,
    /// Index of the rollout to draw.
    #[arg(long, default_value_t = 0, requires = "rollouts")]
    pub episode: usize,
    /// Plan JSON printed by `plan`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Track the plan was made for; it is drawn as ego rather than as traffic.
    #[arg(long, requires = "plan")]
    pub track: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
