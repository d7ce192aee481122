//! `phycosf`: simulate, train, render, eval and sweep.
//!
//! Exit codes: 0 ok, 1 I/O or malformed files, 2 config, 3 training failure,
//! 4 query range, 5 shape or wavelength mismatch.

mod commands;
mod config;
mod exit;
mod manifest;
mod sensing;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use phycosf_core::metrics::Task;
use phycosf_core::pipeline::TrainConfig;

use commands::{eval, render, simulate, sweep, train};
use exit::{CliError, CliResult, QUERY_RANGE};
use manifest::Recorder;

#[derive(Parser)]
#[command(name = "phycosf", version, about = "Snapshot spectral imaging with continuous-wavelength rendering")]
struct Cli {
    /// Override a config key: `key=value` (value parsed as JSON when possible).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Continuous,
    SuperResolution,
}

#[derive(Subcommand)]
enum Command {
    /// Write a coded mask and one snapshot per scene.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset, checkpointing every epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset root holding `split.json` and `scenes/`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in `out` if present.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs of this invocation.
        #[arg(long, value_name = "N")]
        stop_after_epochs: Option<u64>,
    },
    /// Render a measurement at query wavelengths.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Measurement plane container.
        #[arg(long)]
        measurement: PathBuf,
        /// `sensing.json` written by `simulate`.
        #[arg(long)]
        sensing: PathBuf,
        /// Comma-separated wavelengths in nm.
        #[arg(long, conflicts_with = "range", required_unless_present = "range")]
        lambdas: Option<String>,
        /// Inclusive `start:stop:step` in nm.
        #[arg(long)]
        range: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted cubes against references.
    Eval {
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long = "reference", required = true)]
        references: Vec<PathBuf>,
        #[arg(long = "name")]
        names: Vec<String>,
        #[arg(long, value_enum, default_value = "continuous")]
        task: TaskArg,
        /// Score only these reference bands (comma-separated nm).
        #[arg(long)]
        select: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score every ablation variant for every seed.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = sweep::VARIANTS.map(String::from))]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
        seeds: Vec<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Train { .. } => "train",
            Command::Render { .. } => "render",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::Simulate { out, .. }
            | Command::Train { out, .. }
            | Command::Render { out, .. }
            | Command::Eval { out, .. }
            | Command::Sweep { out, .. } => out,
        }
    }
}

fn load_train(path: &Path, overrides: &[String], rec: &mut Recorder) -> CliResult<TrainConfig> {
    rec.input(path);
    let (value, config): (_, TrainConfig) = config::load(path, overrides, true)?;
    config.validate()?;
    rec.config = value;
    rec.seed = Some(config.seed);
    Ok(config)
}

fn dispatch(cli: &Cli, rec: &mut Recorder) -> CliResult<()> {
    let overrides = &cli.overrides;
    match &cli.command {
        Command::Simulate { config: path, out } => {
            rec.input(path);
            let (value, cfg): (_, simulate::SimulateConfig) = config::load(path, overrides, true)?;
            rec.config = value;
            rec.seed = Some(cfg.seed);
            simulate::run(&cfg, out, rec)
        }
        Command::Train {
            config: path,
            data,
            out,
            resume,
            stop_after_epochs,
        } => {
            let cfg = load_train(path, overrides, rec)?;
            let args = train::TrainArgs {
                data,
                out,
                resume: *resume,
                stop_after: *stop_after_epochs,
            };
            train::run(cfg, args, rec)
        }
        Command::Render {
            checkpoint,
            measurement,
            sensing,
            lambdas,
            range,
            out,
        } => {
            let queries = match (lambdas, range) {
                (Some(l), _) => render::parse_list(l)?,
                (None, Some(r)) => render::parse_range(r)?,
                (None, None) => return Err(CliError::new(QUERY_RANGE, "give --lambdas or --range")),
            };
            rec.config = serde_json::json!({ "queries": queries });
            let args = render::RenderArgs {
                checkpoint,
                measurement,
                sensing,
                queries,
                out,
            };
            render::run(args, rec)
        }
        Command::Eval {
            preds,
            references,
            names,
            task,
            select,
            out,
        } => {
            let select = match select {
                Some(s) => render::parse_list(s).map_err(|e| CliError::config(e.message))?,
                None => Vec::new(),
            };
            let task = match task {
                TaskArg::Continuous => Task::Continuous,
                TaskArg::SuperResolution => Task::SuperResolution,
            };
            rec.config = serde_json::json!({ "task": task, "select": select });
            let args = eval::EvalArgs {
                preds,
                references,
                names,
                task,
                select,
                out,
            };
            eval::run(args, rec)
        }
        Command::Sweep {
            config: path,
            data,
            out,
            variants,
            seeds,
        } => {
            let cfg = load_train(path, overrides, rec)?;
            let args = sweep::SweepArgs {
                data,
                out,
                variants,
                seeds,
            };
            sweep::run(cfg, args, rec)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut rec = Recorder::new(cli.command.name());
    let result = dispatch(&cli, &mut rec);
    let code = match &result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    };
    if let Err(e) = rec.finish(cli.command.out(), code) {
        eprintln!("error: could not write the run manifest: {e}");
        if code == exit::OK {
            return ExitCode::from(e.code as u8);
        }
    }
    ExitCode::from(code as u8)
}
