//! `cobweb-lab`: dataset preparation, training, prediction and experiment
//! runs. Diagnostics go to stderr; results go to files.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or configuration error,
//! 3 data error.

mod commands;
mod config;
mod error;
mod model;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cobweb_lab::protocol::{ExperimentId, ModelKind};
use cobweb_lab::Execution;

use config::{Overrides, RunConfig};
use error::CliResult;

#[derive(Parser)]
#[command(name = "cobweb-lab", version, about = "Continual-learning experiments with Cobweb/4V and CobwebNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Validate the configuration and data headers without computing.
    #[arg(long)]
    dry_run: bool,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset selector: mnist-desk, mnist[:DIR], fashion-mnist[:DIR],
    /// cifar10[:DIR], organa[:DIR], dump:FILE or synth:K,D,PER_CLASS,SPREAD,SEED.
    #[arg(long)]
    data: Option<String>,
    /// Stratified fraction of the dataset to keep.
    #[arg(long)]
    fraction: Option<f64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ScheduleArgs {
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    per_class_d1: Option<usize>,
    #[arg(long)]
    chosen_class: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on the training half and write a checkpoint and summary.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_model)]
        model: Option<ModelKind>,
    },
    /// Write label distributions for the instances in a dump or CSV file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output CSV file.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run an experiment over the ten-split schedule.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// 1 (structure), 2 (updates), 3 (forgetting) or baselines.
        #[arg(long, value_parser = parse_experiment)]
        id: Option<ExperimentId>,
        /// Rerun the experiment recorded in a manifest.
        #[arg(long, conflicts_with = "id")]
        manifest: Option<PathBuf>,
    },
    /// Write the split schedule of every seed as JSON.
    MakeSplits {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Print hierarchy statistics of a tree checkpoint.
    InspectTree {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        dry_run: bool,
    },
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: cobweb_lab::Error| e.to_string())
}

fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    s.parse().map_err(|e: cobweb_lab::Error| e.to_string())
}

fn exec(common: &Common) -> Execution {
    if common.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn load(common: &Common, o: Overrides) -> CliResult<RunConfig> {
    let o = Overrides { seed: common.seed, ..o };
    Ok(RunConfig::load(common.config.as_deref())?.apply(&o))
}

fn data_overrides(d: &DataArgs) -> Overrides {
    Overrides {
        dataset: d.data.clone(),
        fraction: d.fraction,
        output: d.out.clone(),
        ..Overrides::default()
    }
}

fn schedule_overrides(d: &DataArgs, s: &ScheduleArgs) -> Overrides {
    Overrides {
        seeds: s.seeds.clone(),
        per_class_d1: s.per_class_d1,
        chosen_class: s.chosen_class,
        ..data_overrides(d)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit { common, data, model } => {
            let cfg = load(&common, Overrides { model, ..data_overrides(&data) })?;
            commands::fit(&cfg, common.dry_run, exec(&common))
        }
        Command::Predict { common, checkpoint, input, out } => {
            let cfg = load(&common, Overrides::default())?;
            commands::predict(&checkpoint, &input, &out, &cfg, common.dry_run, exec(&common))
        }
        Command::Experiment { common, data, schedule, id, manifest } => {
            let cfg = load(&common, schedule_overrides(&data, &schedule))?;
            let args = commands::ExperimentArgs { id, manifest };
            commands::experiment(&args, cfg, common.dry_run, exec(&common))
        }
        Command::MakeSplits { common, data, schedule } => {
            let cfg = load(&common, schedule_overrides(&data, &schedule))?;
            commands::make_splits(&cfg, common.dry_run)
        }
        Command::InspectTree { checkpoint, json, dry_run } => {
            let text = commands::inspect_tree(&checkpoint, json, dry_run)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cobweb-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

