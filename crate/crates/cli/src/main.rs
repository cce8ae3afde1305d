//! `macroplace`: synthetic designs, training, fine-tuning and guided placement.

mod commands;
mod config;
mod error;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use crate::config::{parse_assignment, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "macroplace",
    version,
    about = "Energy-conditioned diffusion macro placement"
)]
struct Cli {
    /// TOML configuration file; unset keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set place.guidance.cfg_scale=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (`generate.*`).
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a score network on a generated dataset (`train.*`).
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tune a checkpoint on one design (`finetune.*`).
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        netlist: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        data_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample placements of one design (`place.*`).
    Place {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        netlist: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Compute HPWL, congestion, overlap and energy of a placement (`eval.*`).
    Eval {
        #[arg(long)]
        netlist: Option<PathBuf>,
        #[arg(long)]
        placement: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a placement as SVG (`render.*`).
    Render {
        #[arg(long)]
        netlist: Option<PathBuf>,
        #[arg(long)]
        placement: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Default)]
struct Overrides(Vec<(String, toml::Value)>);

impl Overrides {
    fn path(&mut self, key: &str, value: Option<PathBuf>) {
        if let Some(v) = value {
            self.0
                .push((key.into(), toml::Value::String(v.to_string_lossy().into_owned())));
        }
    }

    fn int(&mut self, key: &str, value: Option<impl Into<u64>>) {
        if let Some(v) = value {
            self.0.push((key.into(), toml::Value::Integer(v.into() as i64)));
        }
    }

    fn float(&mut self, key: &str, value: Option<f64>) {
        if let Some(v) = value {
            self.0.push((key.into(), toml::Value::Float(v)));
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Finetune { .. } => "finetune",
            Command::Place { .. } => "place",
            Command::Eval { .. } => "eval",
            Command::Render { .. } => "render",
        }
    }

    /// Command-line flags as the configuration keys they mirror.
    fn overrides(self) -> Vec<(String, toml::Value)> {
        let mut o = Overrides::default();
        let us = |v: Option<usize>| v.map(|v| v as u64);
        match self {
            Command::Generate { out, count, seed } => {
                o.path("generate.out", out);
                o.int("generate.dataset.count", us(count));
                o.int("generate.dataset.seed", seed);
            }
            Command::Train {
                dataset,
                out,
                resume,
                steps,
                seed,
            } => {
                o.path("train.dataset", dataset);
                o.path("train.out", out);
                o.path("train.resume", resume);
                o.int("train.optimizer.steps", us(steps));
                o.int("train.optimizer.seed", seed);
            }
            Command::Finetune {
                checkpoint,
                netlist,
                out,
                steps,
                data_fraction,
                seed,
            } => {
                o.path("finetune.checkpoint", checkpoint);
                o.path("finetune.netlist", netlist);
                o.path("finetune.out", out);
                o.int("finetune.config.steps", us(steps));
                o.float("finetune.config.data_fraction", data_fraction);
                o.int("finetune.config.seed", seed);
            }
            Command::Place {
                checkpoint,
                netlist,
                out,
                count,
                seed,
                frames,
            } => {
                o.path("place.checkpoint", checkpoint);
                o.path("place.netlist", netlist);
                o.path("place.out", out);
                o.int("place.count", us(count));
                o.int("place.seed", seed);
                o.int("place.frames", us(frames));
            }
            Command::Eval {
                netlist,
                placement,
                out,
            } => {
                o.path("eval.netlist", netlist);
                o.path("eval.placement", placement);
                o.path("eval.out", out);
            }
            Command::Render {
                netlist,
                placement,
                out,
            } => {
                o.path("render.netlist", netlist);
                o.path("render.placement", placement);
                o.path("render.out", out);
            }
        }
        o.0
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut overrides = cli
        .set
        .iter()
        .map(|s| parse_assignment(s))
        .collect::<Result<Vec<_>, _>>()?;
    let name = cli.command.as_ref().map(Command::name);
    if let Some(command) = cli.command {
        overrides.extend(command.overrides());
    }
    let config = base.with_overrides(&overrides)?;
    if cli.dump_config {
        let _ = write!(io::stdout().lock(), "{}", config.to_toml()?);
        return Ok(());
    }
    match name {
        Some("generate") => commands::generate(&config),
        Some("train") => commands::train(&config),
        Some("finetune") => commands::finetune_cmd(&config),
        Some("place") => commands::place(&config),
        Some("eval") => {
            let out = commands::eval(&config)?;
            let _ = writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Some("render") => commands::render(&config),
        _ => Err(CliError::Usage(
            "no command given; see `macroplace --help`".into(),
        )),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
