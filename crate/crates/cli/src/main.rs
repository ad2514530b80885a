//! `dialknow`: ingest corpora, train, evaluate and benchmark from the
//! command line. Outputs go under `$DIALKNOW_OUT` (default
//! `./dialknow-out`), one directory per run with a `manifest.json`.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dialknow::evaluation::EvalMode;
use toml::Value;

use crate::commands::Task;
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Parser)]
#[command(name = "dialknow", version, about = "Knowledge-grounded dialog: detection, selection, generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command. Precedence: flags > `--set` > config file.
#[derive(Args)]
struct Common {
    /// TOML key-value config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output name (directory under the command's output group).
    #[arg(long)]
    name: Option<String>,
    /// Corpus directory or name under `$DIALKNOW_OUT/data`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Default)]
struct Models {
    /// Checkpoint path, model name under `$DIALKNOW_OUT/models`, or `oracle`.
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    selector: Option<String>,
    #[arg(long)]
    generator: Option<String>,
    /// Dense retriever for rag-joint training.
    #[arg(long)]
    retriever: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    GroundTruth,
    Cascaded,
}

#[derive(Subcommand)]
enum Command {
    /// Load challenge-format knowledge/logs/labels and store a canonical copy.
    Ingest {
        #[arg(long)]
        knowledge: Option<PathBuf>,
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a separable synthetic corpus.
    MakeToy {
        #[arg(long)]
        domains: Option<usize>,
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long)]
        dialogs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model on a corpus.
    Train {
        #[arg(value_enum)]
        task: Task,
        #[command(flatten)]
        models: Models,
        #[command(flatten)]
        common: Common,
    },
    /// Run the detection → selection → generation pipeline and score it.
    Evaluate {
        #[arg(long, value_enum)]
        mode: Mode,
        #[command(flatten)]
        models: Models,
        #[command(flatten)]
        common: Common,
    },
    /// Per-turn latency and model calls of knowledge selectors.
    Bench {
        #[arg(long)]
        selector: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

type Flags = Vec<(&'static str, Value)>;

fn push<T: Into<Value>>(flags: &mut Flags, key: &'static str, value: Option<T>) {
    if let Some(v) = value {
        flags.push((key, v.into()));
    }
}

fn push_usize(flags: &mut Flags, key: &'static str, value: Option<usize>) {
    push(flags, key, value.map(|v| v as i64));
}

fn push_path(flags: &mut Flags, key: &'static str, value: Option<PathBuf>) {
    push(flags, key, value.map(|p| p.to_string_lossy().into_owned()));
}

fn load(common: Common, mut flags: Flags) -> Result<RunConfig> {
    push(&mut flags, "seed", common.seed.map(|s| s as i64));
    push(&mut flags, "name", common.name);
    push(&mut flags, "data", common.data);
    push_usize(&mut flags, "steps", common.steps);
    push(&mut flags, "learning_rate", common.learning_rate);
    push_usize(&mut flags, "batch_size", common.batch_size);
    RunConfig::load(common.config.as_deref(), &common.sets, flags)
}

fn model_flags(models: Models) -> Flags {
    let mut flags = Flags::new();
    push(&mut flags, "detector", models.detector);
    push(&mut flags, "selector", models.selector);
    push(&mut flags, "generator", models.generator);
    push(&mut flags, "retriever", models.retriever);
    flags
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { knowledge, logs, labels, common } => {
            let mut flags = Flags::new();
            push_path(&mut flags, "knowledge", knowledge);
            push_path(&mut flags, "logs", logs);
            push_path(&mut flags, "labels", labels);
            commands::ingest(&load(common, flags)?)
        }
        Command::MakeToy { domains, entities, docs, dialogs, common } => {
            let mut flags = Flags::new();
            push_usize(&mut flags, "toy_domains", domains);
            push_usize(&mut flags, "toy_entities", entities);
            push_usize(&mut flags, "toy_docs", docs);
            push_usize(&mut flags, "toy_dialogs", dialogs);
            commands::make_toy_corpus(&load(common, flags)?)
        }
        Command::Train { task, models, common } => commands::train(&load(common, model_flags(models))?, task),
        Command::Evaluate { mode, models, common } => {
            let mode = match mode {
                Mode::GroundTruth => EvalMode::GroundTruth,
                Mode::Cascaded => EvalMode::Cascaded,
            };
            commands::evaluate(&load(common, model_flags(models))?, mode)
        }
        Command::Bench { selector, common } => {
            commands::bench(&load(common, model_flags(Models { selector, ..Default::default() }))?)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
