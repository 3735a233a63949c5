//! Operator surface: config-driven training, transfer, experiments,
//! evaluation, plotting and option inspection.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O
//! error. Log verbosity comes from the SOFTOPTS_LOG environment variable.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "softopts", version, about = "Multitask soft-option training and transfer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train shared option priors (and per-task posteriors) on a protocol's
    /// training tasks; writes checkpoints and a metrics log.
    Train {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's run.out_dir).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Dump the fully resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Train fresh posteriors against a frozen prior checkpoint on the
    /// protocol's transfer tasks, one run per requested variant.
    Transfer {
        #[arg(long)]
        config: PathBuf,
        /// Prior checkpoint from `train`. Optional for the flat variant.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Override the config's variant list (repeatable).
        #[arg(long)]
        variant: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        print_config: bool,
    },
    /// Run the full protocol: training phases plus every variant's transfer,
    /// across all configured seeds; writes median/std curve tables.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        print_config: bool,
    },
    /// Evaluate one task's posterior from a checkpoint (test-mode episodes).
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index into the protocol's task list.
        #[arg(long, default_value_t = 0)]
        task_index: usize,
        /// Evaluate on the transfer task set instead of the training set.
        #[arg(long)]
        transfer_tasks: bool,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        /// Sample from the policy instead of acting greedily.
        #[arg(long)]
        sampled: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render learning curves from metrics logs and/or curve tables as SVG.
    Plot {
        /// Metrics .jsonl files or curve .json tables.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "learning curves")]
        title: String,
    },
    /// Render a checkpoint's option priors on a taxi layout: argmax-action
    /// arrows and termination-probability circles per option and passenger
    /// flag.
    InspectTaxi {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Builtin layout id or layout file path.
        #[arg(long, default_value = "taxi30")]
        layout: String,
        /// Hide argmax arrows whose probability is below this floor.
        #[arg(long, default_value_t = 0.3)]
        arrow_floor: f64,
    },
    /// Print the fully resolved configuration for a config file or a bare
    /// protocol's defaults.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<String>,
    },
}

fn exit_code(err: &softopts::Error) -> u8 {
    match err {
        softopts::Error::Config(_) | softopts::Error::Usage(_) | softopts::Error::Format(_) => 2,
        softopts::Error::Numeric(_) => 3,
        softopts::Error::Io(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("SOFTOPTS_LOG", "info"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train {
            config,
            out_dir,
            print_config,
        } => commands::train(&config, out_dir, print_config),
        Cmd::Transfer {
            config,
            prior,
            variant,
            out_dir,
            print_config,
        } => commands::transfer(&config, prior.as_deref(), &variant, out_dir, print_config),
        Cmd::Experiment {
            config,
            out_dir,
            print_config,
        } => commands::experiment(&config, out_dir, print_config),
        Cmd::Eval {
            config,
            checkpoint,
            task_index,
            transfer_tasks,
            episodes,
            sampled,
            seed,
        } => commands::eval(
            &config,
            &checkpoint,
            task_index,
            transfer_tasks,
            episodes,
            sampled,
            seed,
        ),
        Cmd::Plot { inputs, out, title } => commands::plot(&inputs, &out, &title),
        Cmd::InspectTaxi {
            checkpoint,
            out,
            layout,
            arrow_floor,
        } => commands::inspect_taxi(&checkpoint, &out, &layout, arrow_floor),
        Cmd::PrintConfig { config, protocol } => {
            commands::print_config(config.as_deref(), protocol.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
